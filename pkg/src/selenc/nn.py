"""Small float64 conv/dense network with hand-written backprop.

Activations are batched, ``(N, C, H, W)`` for images and ``(N, F)`` after
``flatten``. Weights of conv layers are ``(O, C, kh, kw)`` and of dense
layers ``(O, F)``.

Any weight may be overridden for a single evaluation, optionally with one
weight tensor per sample (a leading batch axis). The importance search uses
this to gate every sample with its own mask.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DivergenceError, ShapeError

KINDS = ("conv2d", "dense", "relu", "flatten", "softmax")
TASKS = ("classification", "regression")
LOSSES = ("cross_entropy", "mse")

_EMPTY = np.zeros(0)


@dataclass
class Layer:
    kind: str
    weight: np.ndarray = field(default_factory=lambda: _EMPTY.copy())
    bias: np.ndarray = field(default_factory=lambda: _EMPTY.copy())
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ShapeError(f"unknown layer kind {self.kind!r}")
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.kind == "conv2d":
            if self.weight.ndim != 4 or min(self.weight.shape) < 1:
                raise ShapeError(f"conv2d weight must be (O, C, kh, kw), got {self.weight.shape}")
            if self.stride < 1 or self.padding < 0:
                raise ShapeError("conv2d needs stride >= 1 and padding >= 0")
        elif self.kind == "dense":
            if self.weight.ndim != 2:
                raise ShapeError(f"dense weight must be (O, F), got {self.weight.shape}")
        elif self.weight.size or self.bias.size:
            raise ShapeError(f"{self.kind} layers carry no parameters")
        if self.has_params and self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"bias shape {self.bias.shape} does not match weight {self.weight.shape}")

    @property
    def has_params(self):
        return self.kind in ("conv2d", "dense")


@dataclass
class Model:
    layers: list
    considered_layers: tuple = ()
    task: str = "classification"

    def __post_init__(self):
        if self.task not in TASKS:
            raise ShapeError(f"unknown task {self.task!r}")
        self.considered_layers = tuple(sorted(int(i) for i in self.considered_layers))
        for i in self.considered_layers:
            if not 0 <= i < len(self.layers) or self.layers[i].kind != "conv2d":
                raise ShapeError("considered layers must be conv2d layers", layer=i)

    def copy(self):
        return copy.deepcopy(self)

    def param_layers(self):
        return [i for i, layer in enumerate(self.layers) if layer.has_params]


@dataclass
class Dataset:
    """Inputs stacked along axis 0; targets are class ids or float tensors."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.targets = np.asarray(self.targets)
        if len(self.inputs) == 0 or len(self.inputs) != len(self.targets):
            raise ShapeError(
                f"dataset needs |inputs| == |targets| > 0, got {len(self.inputs)} and {len(self.targets)}"
            )

    def __len__(self):
        return len(self.inputs)

    @property
    def is_classification(self):
        return np.issubdtype(self.targets.dtype, np.integer)

    def subset(self, index):
        index = np.asarray(index)
        return Dataset(self.inputs[index], self.targets[index])


# --- conv helpers -----------------------------------------------------------


def _im2col(x, kh, kw, stride, padding):
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, ho, wo = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n, ho * wo, c * kh * kw)
    return cols, ho, wo


def _col2im(dcols, x_shape, kh, kw, stride, padding, ho, wo):
    n, c, h, w = x_shape
    dxp = np.zeros((n, c, h + 2 * padding, w + 2 * padding))
    d = dcols.reshape(n, ho, wo, c, kh, kw)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += d[:, :, :, :, i, j].transpose(
                0, 3, 1, 2
            )
    if padding:
        dxp = dxp[:, :, padding:-padding, padding:-padding]
    return dxp


def _linear(cols, w2):
    # cols (N, P, K); w2 (O, K) shared or (N, O, K) per sample
    if w2.ndim == 2:
        return cols @ w2.T
    return np.matmul(cols, w2.transpose(0, 2, 1))


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


# --- forward / backward -----------------------------------------------------


def _layer_forward(i, layer, x, weight):
    if layer.kind == "conv2d":
        o, c, kh, kw = layer.weight.shape
        if x.ndim != 4 or x.shape[1] != c:
            raise ShapeError(f"conv2d expects (N, {c}, H, W) input, got {x.shape}", layer=i)
        if x.shape[2] + 2 * layer.padding < kh or x.shape[3] + 2 * layer.padding < kw:
            raise ShapeError(f"input {x.shape[2:]} smaller than kernel {(kh, kw)}", layer=i)
        cols, ho, wo = _im2col(x, kh, kw, layer.stride, layer.padding)
        w2 = weight.reshape(weight.shape[:-4] + (o, c * kh * kw))
        out = _linear(cols, w2) + layer.bias
        out = out.reshape(x.shape[0], ho, wo, o).transpose(0, 3, 1, 2)
        return out, (x.shape, cols, w2, ho, wo)
    if layer.kind == "dense":
        if x.ndim != 2 or x.shape[1] != layer.weight.shape[1]:
            raise ShapeError(f"dense expects (N, {layer.weight.shape[1]}) input, got {x.shape}", layer=i)
        out = _linear(x[:, None, :], weight)[:, 0, :] + layer.bias
        return out, (x, weight)
    if layer.kind == "relu":
        return np.maximum(x, 0.0), x > 0
    if layer.kind == "flatten":
        return x.reshape(x.shape[0], -1), x.shape
    p = _softmax(x.reshape(x.shape[0], -1))
    return p, p


def _forward_cached(model, x, overrides=None):
    overrides = overrides or {}
    caches = []
    pre_softmax = None
    for i, layer in enumerate(model.layers):
        weight = overrides.get(i, layer.weight)
        if layer.kind == "softmax":
            pre_softmax = x
        x, cache = _layer_forward(i, layer, x, weight)
        caches.append(cache)
    return x, caches, pre_softmax


def _as_batch(x, model):
    x = np.asarray(x, dtype=np.float64)
    first = model.layers[0]
    single_rank = 3 if first.kind == "conv2d" else 1
    if x.ndim == single_rank:
        return x[None], True
    return x, False


def forward(model, x, overrides=None):
    """Evaluate the network on one sample or a batch.

    ``overrides`` maps layer index to a replacement weight, either with the
    layer's own shape or with an extra leading batch axis.
    """
    xb, single = _as_batch(x, model)
    out, _, _ = _forward_cached(model, xb, overrides)
    return out[0] if single else out


def loss_eval(output, target, loss_kind="cross_entropy"):
    """Conventional (positive) loss, averaged over the batch.

    For ``cross_entropy`` the output holds class probabilities.
    """
    output = np.asarray(output, dtype=np.float64)
    target = np.asarray(target)
    if loss_kind == "cross_entropy":
        if output.ndim == 1:
            output, target = output[None], target.reshape(1)
        n_classes = output.shape[1]
        if np.any(target < 0) or np.any(target >= n_classes):
            raise ShapeError(f"target class out of range [0, {n_classes})")
        p = output[np.arange(len(output)), target.astype(int)]
        return float(np.mean(-np.log(np.maximum(p, np.finfo(float).tiny))))
    if loss_kind == "mse":
        if output.shape != target.shape:
            raise ShapeError(f"mse needs matching shapes, got {output.shape} vs {target.shape}")
        if output.ndim <= 1:
            return float(np.mean((output - target) ** 2))
        return float(np.mean((output - target) ** 2))
    raise ValueError(f"unknown loss {loss_kind!r}")


def _loss_and_seed(model, out, pre_softmax, y, loss_kind):
    """Mean loss and its gradient with respect to the last activation."""
    n = len(out)
    if loss_kind == "cross_entropy":
        y = np.asarray(y).astype(int)
        n_classes = out.shape[1]
        if np.any(y < 0) or np.any(y >= n_classes):
            raise ShapeError(f"target class out of range [0, {n_classes})")
        if model.layers[-1].kind == "softmax":
            # fused log-softmax keeps the loss finite when probabilities underflow
            z = pre_softmax.reshape(n, -1)
            zmax = z.max(axis=1, keepdims=True)
            lse = np.log(np.exp(z - zmax).sum(axis=1)) + zmax[:, 0]
            loss = float(np.mean(lse - z[np.arange(n), y]))
            g = out.copy()
            g[np.arange(n), y] -= 1.0
            return loss, g / n, True
        p = out[np.arange(n), y]
        loss = float(np.mean(-np.log(p)))
        g = np.zeros_like(out)
        g[np.arange(n), y] = -1.0 / (p * n)
        return loss, g, False
    if loss_kind == "mse":
        y = np.asarray(y, dtype=np.float64).reshape(out.shape)
        diff = out - y
        per_sample = diff[0].size
        return float(np.mean(diff**2)), 2.0 * diff / (n * per_sample), False
    raise ValueError(f"unknown loss {loss_kind!r}")


def _backward(model, caches, g, skip_softmax, want):
    """Backpropagate ``g``; returns {layer: (dW, db)} for layers in ``want``."""
    grads = {}
    first_needed = min(want) if want else len(model.layers)
    for i in range(len(model.layers) - 1, first_needed - 1, -1):
        layer, cache = model.layers[i], caches[i]
        need_input = i > first_needed
        if layer.kind == "softmax":
            if skip_softmax and i == len(model.layers) - 1:
                continue
            p = cache
            g = p * (g - (g * p).sum(axis=1, keepdims=True))
        elif layer.kind == "relu":
            g = g * cache
        elif layer.kind == "flatten":
            g = g.reshape(cache)
        elif layer.kind == "dense":
            x, w = cache
            if i in want:
                dw = np.matmul(g[:, :, None], x[:, None, :]) if w.ndim == 3 else g.T @ x
                grads[i] = (dw, g.sum(axis=0))
            if need_input:
                g = np.matmul(g[:, None, :], w)[:, 0, :] if w.ndim == 3 else g @ w
        else:
            x_shape, cols, w2, ho, wo = cache
            o = w2.shape[-2]
            kh, kw = layer.weight.shape[2:]
            gr = g.transpose(0, 2, 3, 1).reshape(g.shape[0], ho * wo, o)
            if i in want:
                if w2.ndim == 3:
                    dw = np.matmul(gr.transpose(0, 2, 1), cols).reshape((g.shape[0],) + layer.weight.shape)
                else:
                    dw = np.tensordot(gr, cols, axes=([0, 1], [0, 1])).reshape(layer.weight.shape)
                grads[i] = (dw, g.sum(axis=(0, 2, 3)))
            if need_input:
                dcols = np.matmul(gr, w2)
                g = _col2im(dcols, x_shape, kh, kw, layer.stride, layer.padding, ho, wo)
    return grads


def _run(model, x, y, loss_kind, overrides, want):
    out, caches, pre_softmax = _forward_cached(model, x, overrides)
    loss, g, fused = _loss_and_seed(model, out, pre_softmax, y, loss_kind)
    if not np.isfinite(loss):
        raise DivergenceError(f"non-finite loss {loss}")
    return loss, _backward(model, caches, g, fused, want)


def grad_weights(model, batch, loss_kind="cross_entropy", overrides=None, layers=None):
    """Mean batch loss and ``{layer: (dW, db)}`` for every parametrised layer.

    ``layers`` restricts which layers receive gradients. Gradients with respect
    to a per-sample override keep the leading batch axis.
    """
    want = set(model.param_layers() if layers is None else layers)
    return _run(model, batch.inputs, batch.targets, loss_kind, overrides, want)


@dataclass
class TrainConfig:
    epochs: int = 30
    step_size: float = 0.01
    batch_size: int = 32
    seed: int = 0
    momentum: float = 0.9
    loss_kind: str = "cross_entropy"

    def __post_init__(self):
        if self.epochs < 0 or self.step_size <= 0 or self.batch_size < 1:
            raise ValueError("epochs >= 0, step_size > 0 and batch_size >= 1 required")


def train(model, data, config, trainable=None):
    """SGD with momentum; returns an updated copy of ``model``.

    ``trainable`` maps layer index to ``None`` (whole layer, weight and bias)
    or a boolean mask over the weight (only those entries move, bias frozen).
    By default every parametrised layer trains.
    """
    model = model.copy()
    if trainable is None:
        trainable = {i: None for i in model.param_layers()}
    rng = np.random.default_rng(config.seed)
    velocity = {
        i: (np.zeros_like(model.layers[i].weight), np.zeros_like(model.layers[i].bias)) for i in trainable
    }
    n = len(data)
    step = 0
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = data.subset(order[start : start + config.batch_size])
            try:
                _, grads = grad_weights(model, batch, config.loss_kind, layers=trainable)
            except DivergenceError as exc:
                raise DivergenceError("training diverged", batch=step) from exc
            for i, mask in trainable.items():
                layer = model.layers[i]
                dw, db = grads[i]
                vw, vb = velocity[i]
                if mask is not None:
                    dw = np.where(mask, dw, 0.0)
                vw *= config.momentum
                vw -= config.step_size * dw
                layer.weight += vw
                if mask is None:
                    vb *= config.momentum
                    vb -= config.step_size * db
                    layer.bias += vb
            step += 1
    return model


def predict(model, inputs, batch_size=512):
    inputs = np.asarray(inputs, dtype=np.float64)
    return np.concatenate([forward(model, inputs[s : s + batch_size]) for s in range(0, len(inputs), batch_size)])


def evaluate(model, data):
    """Accuracy in [0, 1] for classification, mean negative MSE for regression."""
    out = predict(model, data.inputs)
    if model.task == "classification":
        return float(np.mean(out.argmax(axis=1) == data.targets))
    diff = out - np.asarray(data.targets, dtype=np.float64).reshape(out.shape)
    return -float(np.mean(diff**2))


def he_conv(rng, out_ch, in_ch, k):
    std = np.sqrt(2.0 / (in_ch * k * k))
    return rng.normal(0.0, std, (out_ch, in_ch, k, k))


def desk_model(seed=0, in_shape=(1, 8, 8), n_classes=10):
    """Two 3x3 convs (8 and 16 channels) and a dense head; both convs are considered."""
    rng = np.random.default_rng(seed)
    c, h, w = in_shape
    conv1 = Layer("conv2d", he_conv(rng, 8, c, 3), np.zeros(8), stride=1, padding=0)
    conv2 = Layer("conv2d", he_conv(rng, 16, 8, 3), np.zeros(16), stride=2, padding=1)
    h1, w1 = h - 2, w - 2
    feat = 16 * ((h1 + 1) // 2) * ((w1 + 1) // 2)
    dense = Layer("dense", rng.normal(0.0, np.sqrt(1.0 / feat), (n_classes, feat)), np.zeros(n_classes))
    layers = [conv1, Layer("relu"), conv2, Layer("relu"), Layer("flatten"), dense, Layer("softmax")]
    return Model(layers, considered_layers=(0, 2), task="classification")
