"""1-D signal denoisers: periodic orthogonal DWT with soft thresholding, and
average / gaussian / median filters with replicate edges."""

import math

import numpy as np

from .errors import AttackError

_S3 = math.sqrt(3.0)
WAVELETS = {
    "haar": np.array([1.0, 1.0]) / math.sqrt(2.0),
    "db2": np.array([1 + _S3, 3 + _S3, 3 - _S3, 1 - _S3]) / (4 * math.sqrt(2.0)),
}


def _filters(wavelet):
    try:
        h = WAVELETS[wavelet]
    except KeyError:
        raise AttackError(f"unknown wavelet {wavelet!r}; choose from {sorted(WAVELETS)}") from None
    g = np.array([(-1) ** n * h[len(h) - 1 - n] for n in range(len(h))])
    return h, g


def dwt(x, wavelet="haar"):
    """One analysis level with periodic extension: (approximation, detail)."""
    h, g = _filters(wavelet)
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if n < len(h) or n % 2:
        raise AttackError(f"signal of length {n} is too short or odd for {wavelet}")
    idx = (2 * np.arange(n // 2)[:, None] + np.arange(len(h))[None, :]) % n
    return x[idx] @ h, x[idx] @ g


def idwt(a, d, wavelet="haar"):
    h, g = _filters(wavelet)
    n = 2 * len(a)
    x = np.zeros(n)
    for k in range(len(h)):
        pos = (2 * np.arange(len(a)) + k) % n
        np.add.at(x, pos, a * h[k] + d * g[k])
    return x


def wavedec(x, wavelet="haar", levels=3):
    details = []
    a = np.asarray(x, dtype=np.float64)
    for _ in range(levels):
        a, d = dwt(a, wavelet)
        details.append(d)
    return a, details


def waverec(a, details, wavelet="haar"):
    for d in reversed(details):
        a = idwt(a, d, wavelet)
    return a


def soft_threshold(x, t):
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def universal_threshold(finest_detail, n):
    sigma = np.median(np.abs(finest_detail)) / 0.6745
    return sigma * math.sqrt(2.0 * math.log(n))


def wavelet_denoise(x, wavelet="haar", levels=3, threshold=None):
    """Pad to a power of two by edge replication, shrink details, crop back.

    ``threshold=None`` uses the universal threshold from the finest details.
    """
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if n < len(_filters(wavelet)[0]):
        raise AttackError(f"signal of length {n} is shorter than the {wavelet} filter")
    size = 1 << max(1, math.ceil(math.log2(n)))
    levels = max(1, min(levels, int(math.log2(size)) - int(math.log2(len(WAVELETS[wavelet]))) + 1))
    padded = np.pad(x, (0, size - n), mode="edge")
    a, details = wavedec(padded, wavelet, levels)
    t = universal_threshold(details[0], size) if threshold is None else threshold
    details = [soft_threshold(d, t) for d in details]
    return waverec(a, details, wavelet)[:n]


def gaussian_kernel(window):
    sigma = window / 6.0
    r = np.arange(window) - window // 2
    k = np.exp(-0.5 * (r / sigma) ** 2)
    return k / k.sum()


def _check_window(window):
    if window < 3 or window % 2 == 0:
        raise AttackError(f"filter window must be odd and >= 3, got {window}")


def filter_signal(x, kind="median", window=3):
    _check_window(window)
    x = np.asarray(x, dtype=np.float64)
    half = window // 2
    padded = np.pad(x, half, mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(padded, window)
    if kind == "average":
        return win.mean(axis=1)
    if kind == "gaussian":
        return win @ gaussian_kernel(window)
    if kind == "median":
        return np.median(win, axis=1)
    raise AttackError(f"unknown filter {kind!r}")
