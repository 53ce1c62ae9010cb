"""Binary file formats (all little-endian).

SENC  model, plain or protected (the two are indistinguishable)::

    "SENC" | version u8 | task u8 | layer count u16
    per layer: kind u8 | shape 4 x u32 (unused dims 0) | stride u16 | padding u16
               | weights f64 | biases f64 (one per output)
    trailer:   considered count u16 | considered indices u16

SDAT  dataset::

    "SDAT" | version u8 | count u32 | input shape 4 x u32 | target kind u8
    [target kind 1 only: target shape 4 x u32]
    inputs f64 | targets (u32 class ids, or f64 tensors)

SIMP  importance maps::

    "SIMP" | version u8 | record count u16
    per record: layer u16 | count u32 | count x (index u32, importance f64)

SBND  cipher bundle (provider secret, never shipped with the model)::

    "SBND" | version u8 | M u8 | L u16 | rho f64 | layers L x u16
    mu[L] f64 | sigma[L] f64 | phi[L] u32
    per tier: has key u8 | key 32 bytes | lower[L] f64 | upper[L] f64
              per layer: count u32, count x u32 indices
"""

import os

import numpy as np

from .binio import Reader, Writer
from .dprm import CipherBundle, LayerStats
from .errors import FormatError
from .fsprng import KEY_BYTES
from .nn import KINDS, TASKS, Dataset, Layer, Model
from .pss import DominatedPartition, ImportanceMap

VERSION = 1


def _shape4(shape):
    if len(shape) > 4:
        raise FormatError(f"rank {len(shape)} exceeds 4")
    return list(shape) + [0] * (4 - len(shape))


def _unshape4(dims):
    return tuple(d for d in dims if d)


# --- models -----------------------------------------------------------------


def model_to_bytes(model):
    w = Writer()
    w.raw(b"SENC")
    w.u8(VERSION)
    w.u8(TASKS.index(model.task))
    w.u16(len(model.layers))
    for layer in model.layers:
        w.u8(KINDS.index(layer.kind))
        for d in _shape4(layer.weight.shape if layer.has_params else ()):
            w.u32(d)
        w.u16(layer.stride)
        w.u16(layer.padding)
        if layer.has_params:
            w.f64s(layer.weight.ravel())
            w.f64s(layer.bias)
    w.u16(len(model.considered_layers))
    for i in model.considered_layers:
        w.u16(i)
    return w.getvalue()


def model_from_bytes(data):
    r = Reader(data)
    r.magic(b"SENC")
    r.version(VERSION)
    at = r.pos
    task = r.u8("task")
    if task >= len(TASKS):
        raise FormatError(f"unknown task code {task}", offset=at)
    layers = []
    for _ in range(r.u16("layer count")):
        at = r.pos
        kind = r.u8("layer kind")
        if kind >= len(KINDS):
            raise FormatError(f"unknown layer kind {kind}", offset=at)
        shape = _unshape4([r.u32("shape") for _ in range(4)])
        stride, padding = r.u16("stride"), r.u16("padding")
        if KINDS[kind] in ("conv2d", "dense"):
            weight = r.f64s(int(np.prod(shape)), "weights").reshape(shape)
            bias = r.f64s(shape[0], "biases")
            layers.append(Layer(KINDS[kind], weight, bias, stride=stride, padding=padding))
        else:
            layers.append(Layer(KINDS[kind], stride=stride, padding=padding))
    considered = [r.u16("considered layer") for _ in range(r.u16("considered count"))]
    r.end()
    return Model(layers, considered, TASKS[task])


# --- datasets ---------------------------------------------------------------


def dataset_to_bytes(ds):
    w = Writer()
    w.raw(b"SDAT")
    w.u8(VERSION)
    w.u32(len(ds))
    for d in _shape4(ds.inputs.shape[1:]):
        w.u32(d)
    if ds.is_classification:
        w.u8(0)
    else:
        w.u8(1)
        for d in _shape4(ds.targets.shape[1:]):
            w.u32(d)
    w.f64s(ds.inputs.ravel())
    if ds.is_classification:
        w.u32s(ds.targets)
    else:
        w.f64s(ds.targets.ravel())
    return w.getvalue()


def dataset_from_bytes(data):
    r = Reader(data)
    r.magic(b"SDAT")
    r.version(VERSION)
    n = r.u32("count")
    in_shape = _unshape4([r.u32("input shape") for _ in range(4)])
    at = r.pos
    kind = r.u8("target kind")
    if kind not in (0, 1):
        raise FormatError(f"unknown target kind {kind}", offset=at)
    t_shape = _unshape4([r.u32("target shape") for _ in range(4)]) if kind == 1 else ()
    inputs = r.f64s(n * int(np.prod(in_shape)), "inputs").reshape((n,) + in_shape)
    if kind == 0:
        targets = r.u32s(n, "targets")
    else:
        targets = r.f64s(n * int(np.prod(t_shape)), "targets").reshape((n,) + t_shape)
    r.end()
    return Dataset(inputs, targets)


# --- importance maps --------------------------------------------------------

_PAIR = np.dtype([("index", "<u4"), ("value", "<f8")])


def importance_to_bytes(maps):
    w = Writer()
    w.raw(b"SIMP")
    w.u8(VERSION)
    w.u16(len(maps))
    for layer in sorted(maps):
        values = maps[layer].values
        pairs = np.empty(len(values), dtype=_PAIR)
        pairs["index"] = np.arange(len(values))
        pairs["value"] = values
        w.u16(layer)
        w.u32(len(values))
        w.raw(pairs.tobytes())
    return w.getvalue()


def importance_from_bytes(data):
    r = Reader(data)
    r.magic(b"SIMP")
    r.version(VERSION)
    maps = {}
    for _ in range(r.u16("record count")):
        layer = r.u16("layer")
        n = r.u32("count")
        at = r.pos
        pairs = np.frombuffer(r.raw(n * _PAIR.itemsize, "pairs"), dtype=_PAIR)
        values = np.full(n, np.nan)
        idx = pairs["index"].astype(np.int64)
        if n and (idx.max() >= n or len(np.unique(idx)) != n):
            raise FormatError(f"layer {layer} indices do not cover 0..{n - 1} exactly once", offset=at)
        values[idx] = pairs["value"]
        maps[layer] = ImportanceMap(layer, values)
    r.end()
    return maps


# --- bundles ----------------------------------------------------------------


def bundle_to_bytes(b):
    layers = b.stats.layers
    L = len(layers)
    part = b.partition
    w = Writer()
    w.raw(b"SBND")
    w.u8(VERSION)
    w.u8(b.M)
    w.u16(L)
    w.f64(b.rho)
    for l in layers:
        w.u16(l)
    w.f64s(b.stats.mu)
    w.f64s(b.stats.sigma)
    for l in layers:
        w.u32(part.phi.get(l, 0))
    for m in range(b.M):
        key = b.keys[m]
        w.u8(0 if key is None else 1)
        w.raw(bytes(KEY_BYTES) if key is None else key)
        w.f64s(b.lower[m])
        w.f64s(b.upper[m])
        for l in layers:
            idx = part.tiers[m].get(l, np.zeros(0, np.int64))
            w.u32(len(idx))
            w.u32s(idx)
    return w.getvalue()


def bundle_from_bytes(data):
    r = Reader(data)
    r.magic(b"SBND")
    r.version(VERSION)
    M, L = r.u8("tier count"), r.u16("layer count")
    rho = r.f64("rho")
    layers = tuple(r.u16("layer") for _ in range(L))
    stats = LayerStats(layers, r.f64s(L, "mu"), r.f64s(L, "sigma"))
    phi = {l: r.u32("phi") for l in layers}
    keys, lower, upper, tiers = [], np.zeros((M, L)), np.zeros((M, L)), []
    for m in range(M):
        r.tier = m + 1
        has_key = r.u8("key flag")
        key = r.raw(KEY_BYTES, "key")
        keys.append(key if has_key else None)
        lower[m] = r.f64s(L, "lower bounds")
        upper[m] = r.f64s(L, "upper bounds")
        tiers.append({l: r.u32s(r.u32("location count"), "locations") for l in layers})
    r.tier = None
    r.end()
    phi = {l: n for l, n in phi.items() if n}
    tiers = [{l: idx for l, idx in t.items() if l in phi} for t in tiers]
    return CipherBundle(keys, lower, upper, stats, rho, DominatedPartition(tiers, phi))


# --- files ------------------------------------------------------------------


def save_bytes(path, data, private=False):
    """Write ``data``; ``private`` files are created owner-read/write only."""
    flags = os.O_WRONLY | os.O_CREAT | os.O_TRUNC
    fd = os.open(path, flags, 0o600 if private else 0o644)
    with os.fdopen(fd, "wb") as fh:
        fh.write(data)
    if private:
        os.chmod(path, 0o600)


def load_bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


def save_model(model, path):
    save_bytes(path, model_to_bytes(model))


def load_model(path):
    return model_from_bytes(load_bytes(path))
