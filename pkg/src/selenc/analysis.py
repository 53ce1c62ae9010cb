"""Statistical checks on protected models: imperceptibility of the
ciphertext, degradation curves for several selection strategies, and the
per-permission score table."""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import kolmogorov

from .dprm import DEFAULT_RHO, LayerStats, decrypt_tiers, encrypt_model, rand_mask
from .errors import AnalysisError
from .fsprng import derive_keys
from .nn import evaluate
from .permissions import assign, decrypt_with_permission
from .pss import SelectConfig, fit_all, partition_by_importance, select_dominated

STRATEGIES = ("pss", "random", "mean", "descending", "ascending")
MIN_KS = 8
MI_BINS = 64


# --- two-sample KS ----------------------------------------------------------


def ks_two_sample(a, b):
    """(D, p): sup-distance of the two ECDFs and its asymptotic Kolmogorov p-value."""
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    n, m = len(a), len(b)
    if n < MIN_KS or m < MIN_KS:
        raise AnalysisError(f"KS needs at least {MIN_KS} values per sample, got {n} and {m}")
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / n
    fb = np.searchsorted(b, grid, side="right") / m
    d = float(np.max(np.abs(fa - fb)))
    n_eff = n * m / (n + m)
    p = float(np.clip(kolmogorov(math.sqrt(n_eff) * d), 0.0, 1.0))
    return d, p


# --- binned mutual information ----------------------------------------------


def _entropy(counts):
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def binned_mi(x, y, bins=MI_BINS):
    """Plug-in MI (nats) from an equal-width ``bins`` x ``bins`` histogram; also H(x)."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(x) != len(y) or len(x) == 0:
        raise AnalysisError("MI needs two nonempty samples of equal length")
    joint, _, _ = np.histogram2d(x, y, bins=bins)
    hx = _entropy(joint.sum(axis=1))
    hy = _entropy(joint.sum(axis=0))
    mi = max(0.0, hx + hy - _entropy(joint.ravel()))
    return mi, hx


# --- imperceptibility -------------------------------------------------------


@dataclass
class LayerReport:
    layer: int
    n_cipher: int
    n_plain: int
    ks_d: float
    ks_p: float
    mi: float  # I(w; c) / H(w), binned
    mi_null: float  # same estimator with c shuffled: the small-sample bias floor
    ks_ok: bool


@dataclass
class ImperceptibilityReport:
    layers: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    alpha: float = 0.01

    @property
    def passed(self):
        return all(r.ks_ok for r in self.layers)

    def to_json(self):
        return json.dumps({"alpha": self.alpha, "skipped": self.skipped, "layers": [asdict(r) for r in self.layers]})


def _selected_mask(size, part, layer):
    mask = np.zeros(size, dtype=bool)
    mask[part.selected(layer)] = True
    return mask


def layer_report(layer, cipher, plain, noise=None, alpha=0.01, seed=0):
    d, p = ks_two_sample(cipher, plain)
    mi = mi_null = float("nan")
    if noise is not None:
        mi, h = binned_mi(noise, cipher)
        shuffled = np.random.default_rng(seed).permutation(cipher)
        null, _ = binned_mi(noise, shuffled)
        mi, mi_null = (mi / h, null / h) if h > 0 else (0.0, 0.0)
    return LayerReport(layer, len(cipher), len(plain), d, p, mi, mi_null, bool(p >= alpha))


def imperceptibility_report(protected, bundle, part=None, alpha=0.01, original=None):
    """Per layer KS (ciphertext vs untouched weights) and binned MI between
    the effective noise w = c - theta and the ciphertext c.

    ``original`` defaults to the full decryption with the bundle's keys.
    """
    part = bundle.partition if part is None else part
    report = ImperceptibilityReport(alpha=alpha)
    if part is None or part.is_empty():
        return report
    if original is None:
        original = decrypt_tiers(
            protected, part.tiers, bundle.keys, bundle.lower, bundle.upper, bundle.stats, bundle.rho
        )
    for layer in protected.considered_layers:
        if layer not in part.phi:
            continue
        w = protected.layers[layer].weight.ravel()
        sel = _selected_mask(w.size, part, layer)
        cipher, plain = w[sel], w[~sel]
        if len(cipher) < MIN_KS or len(plain) < MIN_KS:
            warnings.warn(f"layer {layer}: {len(cipher)} ciphertext values, skipped", stacklevel=2)
            report.skipped.append(layer)
            continue
        noise = cipher - original.layers[layer].weight.ravel()[sel]
        report.layers.append(layer_report(layer, cipher, plain, noise, alpha, seed=layer))
    return report


def mask_only_model(model, part, keys, rho=DEFAULT_RHO):
    """Ablation: RandMask alone, ciphertext written without the Gaussian mapping."""
    stats = LayerStats.of(model)
    out = model.copy()
    for m, tier in enumerate(part.tiers):
        cells = [(l, np.asarray(tier.get(l, ()), dtype=np.int64)) for l in stats.layers]
        cells = [(l, idx) for l, idx in cells if len(idx)]
        if not cells:
            continue
        theta = np.concatenate([model.layers[l].weight.ravel()[idx] for l, idx in cells])
        sig = np.concatenate([np.full(len(idx), stats.sigma[stats.position(l)]) for l, idx in cells])
        c = rand_mask(theta, keys[m], sig, rho)
        start = 0
        for l, idx in cells:
            out.layers[l].weight.reshape(-1)[idx] = c[start : start + len(idx)]
            start += len(idx)
    return out


# --- degradation curves -----------------------------------------------------


@dataclass
class CurveRow:
    strategy: str
    fraction: float
    mean: float
    std: float
    trials: int


@dataclass
class CurveTable:
    rows: list = field(default_factory=list)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["strategy", "fraction", "mean", "std", "trials"])
        for r in self.rows:
            w.writerow([r.strategy, f"{r.fraction:.6g}", f"{r.mean:.6f}", f"{r.std:.6f}", r.trials])
        return buf.getvalue()

    def series(self, strategy):
        return [r for r in self.rows if r.strategy == strategy]

    def at(self, strategy, fraction):
        for r in self.rows:
            if r.strategy == strategy and math.isclose(r.fraction, fraction):
                return r
        raise KeyError((strategy, fraction))


def strategy_selection(weights, phi, strategy, importance=None, rng=None):
    """Flat indices of ``phi`` weights picked by ``strategy``, sorted ascending."""
    w = np.asarray(weights, dtype=np.float64).ravel()
    if strategy == "pss":
        if importance is None:
            raise AnalysisError("pss strategy needs importance maps")
        return select_dominated(importance, phi)
    if strategy == "random":
        rng = rng if rng is not None else np.random.default_rng()
        return np.sort(rng.choice(w.size, phi, replace=False))
    if strategy == "mean":
        score = -np.abs(w - w.mean())
    elif strategy == "descending":
        score = w
    elif strategy == "ascending":
        score = -w
    else:
        raise AnalysisError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
    return select_dominated(score, phi)


def protect_with(model, strategy, fraction, keys, importance=None, rng=None, M=1, rho=DEFAULT_RHO):
    """Select by ``strategy`` in every considered layer and encrypt; returns (protected, bundle)."""
    cfg = SelectConfig(fraction=fraction)
    selected, scores = {}, {}
    for layer in model.considered_layers:
        w = model.layers[layer].weight.ravel()
        imp = None if importance is None else importance[layer]
        idx = strategy_selection(w, cfg.phi(w.size), strategy, imp, rng)
        selected[layer] = idx
        scores[layer] = imp.values if strategy == "pss" else _rank_key(w, idx, strategy)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        part = partition_by_importance(selected, scores, M)
    return encrypt_model(model, part, keys, rho)


def _rank_key(w, idx, strategy):
    # order of preference among the selected weights, best first
    key = np.full(w.size, -np.inf)
    if strategy == "mean":
        key[idx] = -np.abs(w[idx] - w.mean())
    elif strategy == "descending":
        key[idx] = w[idx]
    elif strategy == "ascending":
        key[idx] = -w[idx]
    else:
        key[idx] = -np.arange(len(idx), dtype=np.float64)
    return key


def degradation_curve(
    model,
    data,
    strategies=STRATEGIES,
    fractions=(0.02, 0.05, 0.1, 0.2),
    trials=1,
    importance=None,
    select_data=None,
    M=1,
    rho=DEFAULT_RHO,
    seed=0,
):
    """Score of the protected model for each strategy and fraction, averaged over trials.

    Every trial draws fresh keys; the random strategy also draws a fresh
    selection. ``importance`` is fitted on ``select_data`` when missing.
    """
    if trials < 1:
        raise AnalysisError("trials must be >= 1")
    fractions = sorted(float(f) for f in fractions)
    if any(not 0.0 <= f <= 1.0 for f in fractions):
        raise AnalysisError("fractions must lie in [0, 1]")
    if "pss" in strategies and importance is None:
        if select_data is None:
            raise AnalysisError("pss strategy needs importance maps or data to fit them on")
        importance = fit_all(model, select_data, SelectConfig(seed=seed))
    base = None
    table = CurveTable()
    for strategy in strategies:
        if strategy not in STRATEGIES:
            raise AnalysisError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
        for f in fractions:
            if f == 0.0:
                base = evaluate(model, data) if base is None else base
                table.rows.append(CurveRow(strategy, f, base, 0.0, trials))
                continue
            scores = []
            for t in range(trials):
                rng = np.random.default_rng([seed, t, 0x5E1])
                keys = derive_keys(M, seed=seed * 100_003 + t)
                protected, _ = protect_with(model, strategy, f, keys, importance, rng, M, rho)
                scores.append(evaluate(protected, data))
            table.rows.append(CurveRow(strategy, f, float(np.mean(scores)), float(np.std(scores)), trials))
    return table


# --- hierarchy --------------------------------------------------------------


def hierarchy_table(protected, bundle, part, data, M=None):
    """Scores for permission levels 0..M (0 = no permission)."""
    M = bundle.M if M is None else M
    if M < 2:
        raise AnalysisError("hierarchy needs M >= 2")
    if M != bundle.M:
        raise AnalysisError(f"bundle has {bundle.M} tiers, asked for {M}")
    scores = [evaluate(protected, data)]
    for level in range(1, M + 1):
        scores.append(evaluate(decrypt_with_permission(protected, assign(bundle, level, part)), data))
    return scores

