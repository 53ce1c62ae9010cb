"""Synthetic 8x8 grayscale classification data.

Each class owns a smooth random template. A sample is its class template,
circularly shifted by up to one pixel, scaled by a random contrast and
corrupted with white noise, then mapped to pixel intensities in [0, 1]
around a mid-gray background (inputs are deliberately not zero-mean, as
with real images).
"""

import numpy as np
from scipy.ndimage import gaussian_filter

from .nn import Dataset


def class_templates(seed, n_classes=10, size=8, smooth=1.0):
    rng = np.random.default_rng(seed)
    raw = rng.normal(size=(n_classes, size, size))
    tpl = np.stack([gaussian_filter(r, smooth, mode="wrap") for r in raw])
    tpl -= tpl.mean(axis=(1, 2), keepdims=True)
    tpl /= tpl.std(axis=(1, 2), keepdims=True)
    return tpl


def make_dataset(
    n, seed=42, n_classes=10, size=8, noise=1.0, shift=1, template_seed=None, background=0.5, contrast=0.2
):
    """``n`` samples with balanced labels.

    ``template_seed`` fixes the class templates independently of the sample
    draw, so train and test splits can share classes while differing in samples.
    """
    tpl = class_templates(seed if template_seed is None else template_seed, n_classes, size)
    rng = np.random.default_rng([seed, n])
    labels = np.arange(n) % n_classes
    rng.shuffle(labels)
    x = np.empty((n, 1, size, size))
    for i, y in enumerate(labels):
        dy, dx = rng.integers(-shift, shift + 1, size=2)
        img = np.roll(tpl[y], (dy, dx), axis=(0, 1)) * rng.uniform(0.7, 1.3)
        x[i, 0] = img + rng.normal(0.0, noise, (size, size))
    x = np.clip(background + contrast * x, 0.0, 1.0)
    return Dataset(x, labels.astype(np.int64))


def desk_splits(seed=42, n_train=2000, n_test=1000, n_classes=10):
    """Train/test sets sharing the class templates of ``seed``."""
    train = make_dataset(n_train, seed=seed, n_classes=n_classes, template_seed=seed)
    test = make_dataset(n_test, seed=seed + 1_000_003, n_classes=n_classes, template_seed=seed)
    return train, test
