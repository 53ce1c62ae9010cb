import numpy as np
import pytest

from selenc.nn import Dataset, Layer, Model


def small_cnn(seed=0, n_classes=3, softmax=True):
    """conv(2->3, 3x3, stride 2, pad 1) -> relu -> conv(3->2, 2x2) -> relu -> flatten -> dense."""
    rng = np.random.default_rng(seed)
    layers = [
        Layer("conv2d", rng.normal(0, 0.5, (3, 2, 3, 3)), rng.normal(0, 0.1, 3), stride=2, padding=1),
        Layer("relu"),
        Layer("conv2d", rng.normal(0, 0.5, (2, 3, 2, 2)), rng.normal(0, 0.1, 2)),
        Layer("relu"),
        Layer("flatten"),
        Layer("dense", rng.normal(0, 0.5, (n_classes, 8)), rng.normal(0, 0.1, n_classes)),
    ]
    if softmax:
        layers.append(Layer("softmax"))
    return Model(layers, considered_layers=(0, 2), task="classification" if softmax else "regression")


def small_batch(seed=0, n=5, n_classes=3, regression=False):
    rng = np.random.default_rng(seed + 100)
    x = rng.normal(0, 1, (n, 2, 6, 6))
    if regression:
        return Dataset(x, rng.normal(0, 1, (n, n_classes)))
    return Dataset(x, rng.integers(0, n_classes, n))


@pytest.fixture
def cnn():
    return small_cnn()


@pytest.fixture(scope="session")
def desk_setup():
    from selenc import desk

    train, test = desk.data()
    return desk.pretrained(), train, test, desk.importance()
