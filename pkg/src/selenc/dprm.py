"""Distribution-preserving random mask.

Encryption of one importance tier:

1. add a keyed pseudorandom mask, uniform in [-rho*sigma_l, rho*sigma_l);
2. per layer, min-max scale the masked values into (0, 1);
3. push them through the inverse CDF of N(mu_l, sigma_l), so that the
   ciphertext looks like ordinary weights of that layer.

Decryption runs the three steps backwards. There is no authentication:
a wrong key silently yields garbage weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CipherError
from .fsprng import Fsprng
from .gaussian import gaussian_cdf, gaussian_icdf

DEFAULT_RHO = 8.0


@dataclass
class LayerStats:
    """Mean and sample standard deviation of each considered layer, in layer order."""

    layers: tuple
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.layers = tuple(int(l) for l in self.layers)
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        if np.any(~(self.sigma > 0)):
            raise CipherError("layer standard deviations must be positive")

    @classmethod
    def of(cls, model, layers=None):
        layers = model.considered_layers if layers is None else tuple(layers)
        w = [model.layers[l].weight.ravel() for l in layers]
        return cls(layers, [x.mean() for x in w], [x.std(ddof=1) for x in w])

    def position(self, layer):
        return self.layers.index(layer)


@dataclass
class CipherBundle:
    """What the provider keeps after encryption: keys, scale bounds and stats.

    ``lower[m, j]`` / ``upper[m, j]`` are the scale bounds of tier ``m`` in the
    ``j``-th considered layer (zero for empty cells).
    """

    keys: list
    lower: np.ndarray
    upper: np.ndarray
    stats: LayerStats
    rho: float
    partition: object = field(repr=False, default=None)

    @property
    def M(self):
        return len(self.keys)


# --- elementary steps -------------------------------------------------------


def mask_values(key, sigmas, rho):
    """Mask r_j = (2 u_j - 1) * rho * sigma_j from the keyed stream, in order."""
    sigmas = np.asarray(sigmas, dtype=np.float64)
    u = Fsprng(key).uniforms(len(sigmas))
    return (2.0 * u - 1.0) * rho * sigmas


def rand_mask(values, key, sigmas, rho=DEFAULT_RHO):
    values = np.asarray(values, dtype=np.float64)
    if len(values) == 0:
        raise CipherError("nothing to mask")
    return values + mask_values(key, sigmas, rho)


def rand_unmask(values, key, sigmas, rho=DEFAULT_RHO):
    return np.asarray(values, dtype=np.float64) - mask_values(key, sigmas, rho)


def scale_bounds(c):
    lo, hi = float(np.min(c)), float(np.max(c))
    pad = max(1e-9, 1e-6 * (hi - lo))
    return lo - pad, hi + pad


def mapping(c, mu, sigma):
    """Masked values of one tier-layer cell -> (ciphertext, lower, upper)."""
    c = np.asarray(c, dtype=np.float64)
    if len(c) == 0:
        raise CipherError("mapping needs at least one value")
    u, v = scale_bounds(c)
    scaled = (c - u) / (v - u)
    return gaussian_icdf(scaled, mu, sigma), u, v


def unmapping(chat, mu, sigma, u, v):
    """Inverse of :func:`mapping`: CDF, then undo the min-max scaling."""
    return gaussian_cdf(np.asarray(chat, dtype=np.float64), mu, sigma) * (v - u) + u


# --- whole-model encryption -------------------------------------------------


def _tier_cells(model, tier, layers):
    """(layer, indices) for every nonempty cell of a tier, in layer order."""
    cells = []
    for layer in layers:
        idx = np.asarray(tier.get(layer, ()), dtype=np.int64)
        if len(idx):
            size = model.layers[layer].weight.size
            if idx.min() < 0 or idx.max() >= size:
                raise CipherError(f"location out of range for layer {layer} ({size} weights)")
            cells.append((layer, idx))
    return cells


def encrypt_model(model, part, keys, rho=DEFAULT_RHO):
    """Encrypt every tier of ``part``; returns (protected copy, bundle)."""
    stats = LayerStats.of(model)
    layers = stats.layers
    for layer in part.layers:
        if layer not in layers:
            raise CipherError(f"layer {layer} is not a considered layer")
    protected = model.copy()
    M = part.M
    lower = np.zeros((M, len(layers)))
    upper = np.zeros((M, len(layers)))
    keys = list(keys)
    for m, tier in enumerate(part.tiers):
        cells = _tier_cells(model, tier, layers)
        if not cells:
            continue
        if m >= len(keys) or keys[m] is None:
            raise CipherError(f"missing key for nonempty tier {m + 1}")
        theta = np.concatenate([model.layers[l].weight.ravel()[idx] for l, idx in cells])
        sig = np.concatenate([np.full(len(idx), stats.sigma[stats.position(l)]) for l, idx in cells])
        c = rand_mask(theta, keys[m], sig, rho)
        start = 0
        for layer, idx in cells:
            j = stats.position(layer)
            chat, lower[m, j], upper[m, j] = mapping(c[start : start + len(idx)], stats.mu[j], stats.sigma[j])
            protected.layers[layer].weight.reshape(-1)[idx] = chat
            start += len(idx)
    keys = keys[:M] + [None] * max(0, M - len(keys))
    return protected, CipherBundle(keys, lower, upper, stats, float(rho), part)


def decrypt_tiers(protected, tiers, keys, lower, upper, stats, rho):
    """Decrypt the given tiers (lists aligned by tier) from a fresh copy of ``protected``."""
    out = protected.copy()
    for m, tier in enumerate(tiers):
        cells = _tier_cells(protected, tier, stats.layers)
        if not cells:
            continue
        masked = []
        for layer, idx in cells:
            j = stats.position(layer)
            chat = protected.layers[layer].weight.ravel()[idx]
            masked.append(unmapping(chat, stats.mu[j], stats.sigma[j], lower[m][j], upper[m][j]))
        sig = np.concatenate([np.full(len(idx), stats.sigma[stats.position(l)]) for l, idx in cells])
        theta = rand_unmask(np.concatenate(masked), keys[m], sig, rho)
        start = 0
        for layer, idx in cells:
            out.layers[layer].weight.reshape(-1)[idx] = theta[start : start + len(idx)]
            start += len(idx)
    return out
