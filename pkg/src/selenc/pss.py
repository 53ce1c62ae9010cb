"""Probabilistic selection of the parameters a model depends on most.

For one conv layer at a time, every weight gets a gate logit. Each training
sample is evaluated with its own random hard-concrete mask that removes
gated weights; the logits are driven to *raise* the loss while an expected-L0
penalty keeps the number of likely-removed weights small. The learned
removal probabilities rank the weights by importance.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import gates
from .errors import DivergenceError, SelectionError
from .nn import grad_weights

log = logging.getLogger(__name__)


@dataclass
class SelectConfig:
    fraction: float = 0.1
    lam: float = 1e-2
    epochs: int = 3
    step_size: float = 0.05
    batch_size: int = 32
    seed: int = 0
    gate_params: gates.GateParams = field(default_factory=gates.GateParams)
    loss_kind: str = "cross_entropy"

    def __post_init__(self):
        if not 0.0 < self.fraction <= 1.0:
            raise SelectionError(f"fraction must be in (0, 1], got {self.fraction}")
        if self.lam < 0:
            raise SelectionError("lambda must be >= 0")
        if self.epochs < 0 or self.batch_size < 1 or self.step_size <= 0:
            raise SelectionError("epochs >= 0, batch_size >= 1 and step_size > 0 required")

    def phi(self, layer_size):
        return min(layer_size, max(1, math.ceil(self.fraction * layer_size - 1e-9)))


@dataclass
class ImportanceMap:
    """Importance of every weight of one layer, indexed by flat position."""

    layer: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        if np.any((self.values < 0) | (self.values > 1)) or not np.all(np.isfinite(self.values)):
            raise SelectionError("importances must lie in [0, 1]")

    def __len__(self):
        return len(self.values)


@dataclass
class DominatedPartition:
    """``tiers[m][layer]`` holds sorted flat indices; tier 0 is the most important."""

    tiers: list
    phi: dict

    @property
    def M(self):
        return len(self.tiers)

    @property
    def layers(self):
        return sorted(self.phi)

    def selected(self, layer):
        return np.sort(np.concatenate([t.get(layer, np.zeros(0, np.int64)) for t in self.tiers]))

    def tier_size(self, m):
        return int(sum(len(v) for v in self.tiers[m].values()))

    def is_empty(self):
        return all(self.tier_size(m) == 0 for m in range(self.M))


class _Adam:
    def __init__(self, shape, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, x, g):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * g
        self.v = self.b2 * self.v + (1 - self.b2) * g * g
        mhat = self.m / (1 - self.b1**self.t)
        vhat = self.v / (1 - self.b2**self.t)
        return x - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def fit_importance(model, layer, data, cfg, return_history=False):
    """Learn removal probabilities for the weights of ``layer``; model weights stay frozen."""
    if layer not in model.considered_layers:
        raise SelectionError(f"layer {layer} is not a considered layer")
    weight = model.layers[layer].weight
    if weight.size == 0:
        raise SelectionError(f"layer {layer} has no weights")
    gp = cfg.gate_params
    n = weight.size
    w_flat = weight.ravel()
    logits = np.zeros(n)
    opt = _Adam(n, cfg.step_size)
    rng = np.random.default_rng(cfg.seed)
    history = []
    tiny = np.finfo(float).tiny
    for _ in range(cfg.epochs):
        order = rng.permutation(len(data))
        for start in range(0, len(data), cfg.batch_size):
            batch = data.subset(order[start : start + cfg.batch_size])
            b = len(batch)
            # one fresh uniform per weight per sample
            u = np.clip(rng.random((b, n)), tiny, 1.0 - 2**-53)
            z, dz = gates.sample_and_grad(logits, u, gp)
            gated = ((1.0 - z) * w_flat).reshape((b,) + weight.shape)
            try:
                loss, grads = grad_weights(model, batch, cfg.loss_kind, overrides={layer: gated}, layers=[layer])
            except DivergenceError as exc:
                raise DivergenceError("importance objective is not finite") from exc
            reg = np.mean(gates.prob_nonzero(logits, gp))
            objective = -loss + cfg.lam * reg
            if not np.isfinite(objective):
                raise DivergenceError(f"importance objective is not finite: {objective}")
            d_eff = grads[layer][0].reshape(b, n)
            # d(-loss)/d logit through W_eff = (1 - z) * W
            g = np.sum(d_eff * dz, axis=0) * w_flat
            g += cfg.lam / n * gates.prob_nonzero_grad(logits, gp)
            logits = opt.step(logits, g)
            history.append(objective)
    imp = ImportanceMap(layer, expit(logits))
    return (imp, history) if return_history else imp


def fit_all(model, data, cfg):
    """Importance maps for every considered layer (layers are independent)."""
    return {l: fit_importance(model, l, data, cfg) for l in model.considered_layers}


def select_dominated(imp, phi):
    """Indices of the ``phi`` largest importances, ties to the lower index, sorted ascending."""
    values = imp.values if isinstance(imp, ImportanceMap) else np.asarray(imp, dtype=np.float64)
    if not 1 <= phi <= len(values):
        raise SelectionError(f"phi must be in [1, {len(values)}], got {phi}")
    order = np.argsort(-values, kind="stable")
    return np.sort(order[:phi])


def nearest_rank(sorted_values, q):
    """Smallest value with at least a ``q`` share of the sample at or below it."""
    n = len(sorted_values)
    rank = min(n, max(1, math.ceil(q * n - 1e-12)))
    return sorted_values[rank - 1]


def tier_thresholds(importances, M):
    """Q_1 >= ... >= Q_M, then -inf, from the importances of the selected weights."""
    s = np.sort(np.asarray(importances, dtype=np.float64))
    return [nearest_rank(s, (M - m + 1) / M) for m in range(1, M + 1)] + [-np.inf]


def assign_tiers(importances, M):
    """Tier number (0-based) for each importance.

    Tier m takes Q_{m+1} < p <= Q_m. When two thresholds coincide the
    interval collapses to the closed point Q_m, so ties land in the most
    important tier that reaches them.
    """
    q = tier_thresholds(importances, M)
    out = np.empty(len(importances), dtype=np.int64)
    for j, p in enumerate(importances):
        for m in range(M):
            hi, lo = q[m], q[m + 1]
            if lo < p <= hi or (p == hi == lo):
                out[j] = m
                break
        else:  # pragma: no cover - the last tier is unbounded below
            out[j] = M - 1
    return out


def partition_by_importance(selected, importance, M):
    """Split each layer's selected indices into ``M`` importance tiers.

    ``selected`` and ``importance`` map layer -> indices / ImportanceMap.
    """
    if M < 1:
        raise SelectionError("M must be >= 1")
    tiers = [dict() for _ in range(M)]
    phi = {}
    for layer in sorted(selected):
        idx = np.sort(np.asarray(selected[layer], dtype=np.int64))
        if len(idx) == 0:
            raise SelectionError(f"layer {layer} has an empty selection")
        values = importance[layer].values if isinstance(importance[layer], ImportanceMap) else importance[layer]
        which = assign_tiers(np.asarray(values)[idx], M)
        for m in range(M):
            tiers[m][layer] = idx[which == m]
        phi[layer] = len(idx)
    empty = [m + 1 for m in range(M) if all(len(v) == 0 for v in tiers[m].values())]
    if empty:
        warnings.warn(f"tiers {empty} are empty; fewer distinct importances than tiers", stacklevel=2)
    return DominatedPartition(tiers, phi)


def locate(part):
    """Per tier, the (layer, flat index) pairs in ascending order."""
    return [[(l, int(i)) for l in sorted(tier) for i in tier[l]] for tier in part.tiers]


def dominated_partition(model, importance, cfg, M):
    """Top-``fraction`` selection in every layer of ``importance`` followed by tiering."""
    selected = {}
    for layer, imp in importance.items():
        size = model.layers[layer].weight.size
        selected[layer] = select_dominated(imp, cfg.phi(size))
    return partition_by_importance(selected, importance, M)


def empty_partition(M=1):
    return DominatedPartition([dict() for _ in range(M)], {})
