"""Hierarchical access permissions.

A level-``k`` permission carries the first ``k`` tiers (locations, scale
bounds, key) plus the per-layer Gaussian statistics, and decrypts exactly
those tiers. Permissions are bearer credentials.

Binary layout ("SPRM", little-endian)::

    magic "SPRM" | version u8 | level u8 | M u8 | L u16 | rho f64
    mu[L] f64 | sigma[L] f64
    per tier: key 32 bytes | lower[L] f64 | upper[L] f64
              per layer: count u32, count x u32 flat indices
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .binio import Reader, Writer
from .dprm import LayerStats, decrypt_tiers
from .errors import FormatError, GrantError
from .fsprng import KEY_BYTES

MAGIC = b"SPRM"
VERSION = 1


@dataclass
class TierGrant:
    key: bytes
    lower: np.ndarray
    upper: np.ndarray
    locations: list  # one sorted index array per considered layer

    def __eq__(self, other):
        return (
            isinstance(other, TierGrant)
            and self.key == other.key
            and np.array_equal(self.lower, other.lower)
            and np.array_equal(self.upper, other.upper)
            and len(self.locations) == len(other.locations)
            and all(np.array_equal(a, b) for a, b in zip(self.locations, other.locations))
        )


@dataclass
class Permission:
    level: int
    M: int
    rho: float
    mu: np.ndarray
    sigma: np.ndarray
    tiers: list

    def __post_init__(self):
        if not 1 <= self.level <= self.M:
            raise GrantError(f"permission level must be in [1, {self.M}], got {self.level}")
        if len(self.tiers) != self.level:
            raise GrantError(f"level {self.level} permission carries {len(self.tiers)} tiers")

    @property
    def L(self):
        return len(self.mu)

    def __eq__(self, other):
        return (
            isinstance(other, Permission)
            and (self.level, self.M, self.rho) == (other.level, other.M, other.rho)
            and np.array_equal(self.mu, other.mu)
            and np.array_equal(self.sigma, other.sigma)
            and self.tiers == other.tiers
        )


def assign(bundle, level, partition=None):
    """Level-``level`` permission from the provider's bundle."""
    part = partition if partition is not None else bundle.partition
    M = bundle.M
    if not 1 <= level <= M:
        raise GrantError(f"permission level must be in [1, {M}], got {level}")
    layers = bundle.stats.layers
    tiers = []
    for m in range(level):
        tier = part.tiers[m]
        locs = [np.asarray(tier.get(l, ()), dtype=np.int64) for l in layers]
        key = bundle.keys[m]
        if key is None:
            if any(len(x) for x in locs):
                raise GrantError(f"bundle has no key for nonempty tier {m + 1}")
            key = bytes(KEY_BYTES)
        tiers.append(TierGrant(bytes(key), bundle.lower[m].copy(), bundle.upper[m].copy(), locs))
    return Permission(level, M, bundle.rho, bundle.stats.mu.copy(), bundle.stats.sigma.copy(), tiers)


def serialize(p):
    w = Writer()
    w.raw(MAGIC)
    w.u8(VERSION)
    w.u8(p.level)
    w.u8(p.M)
    w.u16(p.L)
    w.f64(p.rho)
    w.f64s(p.mu)
    w.f64s(p.sigma)
    for t in p.tiers:
        w.raw(t.key)
        w.f64s(t.lower)
        w.f64s(t.upper)
        for idx in t.locations:
            w.u32(len(idx))
            w.u32s(idx)
    return w.getvalue()


def parse(data):
    r = Reader(data)
    r.magic(MAGIC)
    r.version(VERSION)
    at = r.pos
    level, M = r.u8("level"), r.u8("tier count")
    if not 1 <= level <= M:
        raise FormatError(f"level {level} outside [1, {M}]", offset=at)
    L = r.u16("layer count")
    rho = r.f64("rho")
    mu = r.f64s(L, "mu")
    sigma = r.f64s(L, "sigma")
    tiers = []
    for m in range(level):
        r.tier = m + 1
        key = r.raw(KEY_BYTES, "key")
        lower = r.f64s(L, "lower bounds")
        upper = r.f64s(L, "upper bounds")
        locs = []
        for _ in range(L):
            locs.append(r.u32s(r.u32("location count"), "locations"))
        tiers.append(TierGrant(key, lower, upper, locs))
    r.tier = None
    r.end()
    return Permission(level, M, rho, mu, sigma, tiers)


def size_bits(level, M, L, phi, key_bits=256):
    """Nominal permission size (key_bits + 64 L) level + (16 L level / M) phi."""
    if level == 0:
        return 0
    if not (level > 0 and M > 0 and L > 0 and phi > 0 and key_bits > 0) or level > M:
        raise GrantError("size_bits needs positive arguments and level <= M")
    bits = Fraction(key_bits + 64 * L) * level + Fraction(16 * L * level, M) * Fraction(phi)
    return int(bits) if bits.denominator == 1 else float(bits)


def check_geometry(protected, p):
    layers = protected.considered_layers
    if p.L != len(layers):
        raise GrantError(f"permission covers {p.L} layers, model has {len(layers)} considered layers")
    for m, t in enumerate(p.tiers):
        if len(t.lower) != p.L or len(t.upper) != p.L or len(t.locations) != p.L:
            raise GrantError(f"tier {m + 1} geometry does not match {p.L} layers")
        for j, idx in enumerate(t.locations):
            if len(idx) and (idx.min() < 0 or idx.max() >= protected.layers[layers[j]].weight.size):
                raise GrantError(f"tier {m + 1} location out of range in layer {layers[j]}")
            if len(idx) and not t.lower[j] < t.upper[j]:
                raise GrantError(f"tier {m + 1} has degenerate bounds in layer {layers[j]}")


def decrypt_with_permission(protected, p):
    """Decrypt tiers 1..level from the untouched protected model; higher tiers stay ciphertext."""
    if p is None:
        return protected.copy()
    check_geometry(protected, p)
    layers = protected.considered_layers
    stats = LayerStats(layers, p.mu, p.sigma)
    tiers = [{layers[j]: idx for j, idx in enumerate(t.locations)} for t in p.tiers]
    return decrypt_tiers(
        protected,
        tiers,
        [t.key for t in p.tiers],
        [t.lower for t in p.tiers],
        [t.upper for t in p.tiers],
        stats,
        p.rho,
    )


def to_json(p, show_keys=False):
    return json.dumps(
        {
            "level": p.level,
            "M": p.M,
            "L": p.L,
            "rho": p.rho,
            "mu": p.mu.tolist(),
            "sigma": p.sigma.tolist(),
            "tiers": [
                {
                    "tier": m + 1,
                    "key": t.key.hex() if show_keys else "<redacted>",
                    "lower": t.lower.tolist(),
                    "upper": t.upper.tolist(),
                    "locations": [idx.tolist() for idx in t.locations],
                }
                for m, t in enumerate(p.tiers)
            ],
        },
        indent=2,
    )
