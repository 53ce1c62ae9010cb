"""Attacks on a protected model.

The attacker sees every parameter and knows which layers are considered,
but not where the ciphertext sits. Denoising attacks treat each considered
layer's flattened weights as a noisy 1-D signal; retraining attacks use a
small slice of the training data (10% by default).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import denoise
from .errors import AttackError
from .nn import TrainConfig, evaluate, train
from .pss import SelectConfig, fit_importance, select_dominated

ATTACK_KINDS = (
    "wavelet:haar",
    "wavelet:db2",
    "filter:average",
    "filter:gaussian",
    "filter:median",
    "retrain:layerwise",
    "retrain:transfer",
)


@dataclass
class AttackSpec:
    kind: str
    window: int = 3
    levels: int = 3
    epochs: int = 10
    step_size: float = 0.01
    data_fraction: float = 0.10
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise AttackError(f"unknown attack {self.kind!r}")
        if self.window < 3 or self.window % 2 == 0:
            raise AttackError("window must be odd and >= 3")
        if not 0.0 < self.data_fraction <= 1.0:
            raise AttackError("data fraction must be in (0, 1]")


@dataclass
class AttackReport:
    attack: str
    attacked: float
    baseline: float
    goal: float
    success: bool
    seed: int = 0

    def to_json(self):
        d = asdict(self)
        d["baseline"] = None if math.isnan(self.baseline) else self.baseline
        return json.dumps(d)


def _map_layers(model, fn):
    out = model.copy()
    for l in model.considered_layers:
        w = out.layers[l].weight
        w[...] = fn(w.ravel()).reshape(w.shape)
    return out


def wavelet_attack(protected, wavelet="haar", levels=3, threshold=None):
    return _map_layers(protected, lambda x: denoise.wavelet_denoise(x, wavelet, levels, threshold))


def filter_attack(protected, kind="median", window=3):
    return _map_layers(protected, lambda x: denoise.filter_signal(x, kind, window))


def attacker_slice(data, fraction=0.10, seed=0):
    n = max(1, int(round(fraction * len(data))))
    if len(data) == 0 or n == 0:
        raise AttackError("attacker has no data")
    idx = np.random.default_rng([seed, 0xA77]).choice(len(data), n, replace=False)
    return data.subset(np.sort(idx))


def retrain_attack(protected, data, mode="layerwise", cfg=None, surrogate=None, select_cfg=None):
    """Retrain the protected model on the attacker's data.

    ``layerwise`` retrains each considered layer alone, in order, with the
    others frozen. ``transfer`` retrains only the weights that PSS marks as
    dominated in ``surrogate`` (same architecture, different classes).
    """
    cfg = cfg or TrainConfig(epochs=10)
    if data is None or len(data) == 0:
        raise AttackError("attacker has no data")
    if cfg.epochs == 0:
        return protected.copy()
    if mode == "layerwise":
        model = protected
        for l in protected.considered_layers:
            model = train(model, data, cfg, trainable={l: None})
        return model if model is not protected else protected.copy()
    if mode == "transfer":
        if surrogate is None:
            raise AttackError("transfer attack needs a surrogate model and its data")
        masks = transfer_masks(protected, *surrogate, select_cfg=select_cfg)
        return train(protected, data, cfg, trainable=masks)
    raise AttackError(f"unknown retrain mode {mode!r}")


def transfer_masks(protected, surrogate_model, surrogate_data, select_cfg=None):
    """Boolean masks of the surrogate's dominated positions, per considered layer."""
    select_cfg = select_cfg or SelectConfig()
    masks = {}
    for l in protected.considered_layers:
        imp = fit_importance(surrogate_model, l, surrogate_data, select_cfg)
        size = protected.layers[l].weight.size
        mask = np.zeros(size, dtype=bool)
        mask[select_dominated(imp, select_cfg.phi(size))] = True
        masks[l] = mask.reshape(protected.layers[l].weight.shape)
    return masks


def evaluate_attack(attacked, data, goal, baseline=float("nan"), name="", seed=0):
    score = evaluate(attacked, data)
    return AttackReport(name, score, baseline, goal, bool(score >= goal), seed)


def run_attack(spec, protected, eval_data, goal, baseline=float("nan"), train_data=None, surrogate=None):
    """Apply ``spec`` to ``protected`` and score it against ``goal``."""
    family, variant = spec.kind.split(":")
    if family == "wavelet":
        attacked = wavelet_attack(protected, variant, spec.levels)
    elif family == "filter":
        attacked = filter_attack(protected, variant, spec.window)
    else:
        if train_data is None:
            raise AttackError("retraining attacks need the training set to slice from")
        data = attacker_slice(train_data, spec.data_fraction, spec.seed)
        cfg = TrainConfig(epochs=spec.epochs, step_size=spec.step_size, seed=spec.seed)
        attacked = retrain_attack(
            protected, data, variant, cfg, surrogate=surrogate, select_cfg=SelectConfig(seed=spec.seed)
        )
    return evaluate_attack(attacked, eval_data, goal, baseline, spec.kind, spec.seed)
