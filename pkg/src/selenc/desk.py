"""The pinned desk-scale setup every end-to-end check runs against.

Data: 2000 train / 1000 test synthetic 8x8 images, 10 classes, seed 42.
Model: conv 3x3 (8 ch, no padding) -> relu -> conv 3x3 (16 ch, stride 2,
padding 1) -> relu -> dense(144 -> 10) -> softmax, init seed 0, trained for
30 epochs of SGD (step 0.01, momentum 0.9, batch 32, seed 0).
"""

from dataclasses import dataclass, field
from functools import lru_cache

from .data import desk_splits, make_dataset
from .nn import TrainConfig, desk_model, evaluate, train
from .pss import SelectConfig, fit_all

DATA_SEED = 42
MODEL_SEED = 0
N_CLASSES = 10
CHANCE = 1.0 / N_CLASSES


@dataclass(frozen=True)
class Desk:
    data_seed: int = DATA_SEED
    model_seed: int = MODEL_SEED
    n_train: int = 2000
    n_test: int = 1000
    train: TrainConfig = field(default_factory=TrainConfig)


def select_config(fraction=0.1, seed=0):
    return SelectConfig(fraction=fraction, seed=seed)


@lru_cache(maxsize=4)
def data(seed=DATA_SEED):
    return desk_splits(seed=seed)


@lru_cache(maxsize=4)
def pretrained(data_seed=DATA_SEED, model_seed=MODEL_SEED):
    train_set, _ = data(data_seed)
    return train(desk_model(model_seed), train_set, TrainConfig(seed=model_seed))


def baseline():
    return evaluate(pretrained(), data()[1])


@lru_cache(maxsize=4)
def importance(seed=0):
    """Importance maps of both conv layers of the pretrained desk model."""
    return fit_all(pretrained(), data()[0], select_config(seed=seed))


def surrogate_data(seed=DATA_SEED + 1, n=2000):
    """Another ten classes (different templates) for the transfer attack."""
    return make_dataset(n, seed=seed, template_seed=seed)


@lru_cache(maxsize=2)
def surrogate(model_seed=MODEL_SEED + 1):
    """Same architecture trained on the other ten classes; (model, its data)."""
    sd = surrogate_data()
    return train(desk_model(model_seed), sd, TrainConfig(seed=model_seed)), sd
