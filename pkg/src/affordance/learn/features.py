"""Image embeddings and the environment-change metric."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter
from sklearn.base import BaseEstimator, TransformerMixin

from ..errors import ShapeMismatch
from ..model import encode_images


class PixelEmbedding(TransformerMixin, BaseEstimator):
    """Average-pool images to a ``grid x grid`` thumbnail and flatten it."""

    def __init__(self, grid=8):
        self.grid = grid

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        arr = np.asarray(X, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[None]
        n, h, w = arr.shape
        g = self.grid
        if h % g or w % g:
            raise ShapeMismatch(f"{h}x{w} images do not pool evenly onto a {g}x{g} grid")
        return arr.reshape(n, g, h // g, g, w // g).mean(axis=(2, 4)).reshape(n, g * g)

    def __call__(self, X):
        return self.transform(X)


class EncoderEmbedding(TransformerMixin, BaseEstimator):
    """Flattened spatial latent of a trained affordance encoder."""

    def __init__(self, net=None):
        self.net = net

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        return encode_images(self.net, X)

    def __call__(self, X):
        return self.transform(X)


def make_embedding(mode, net=None):
    if mode == "pixel":
        return PixelEmbedding()
    if mode == "encoder":
        if net is None:
            raise ValueError("encoder embedding needs a trained network")
        return EncoderEmbedding(net)
    raise ValueError(f"unknown embedding mode {mode!r}")


@dataclass(frozen=True)
class EnvChangeModel:
    """Masked, blurred, thresholded image-difference metric.

    ``blur_sigma`` is the Gaussian blur radius in pixels; per-pixel changes
    at or below ``threshold`` are ignored; ``feature_weight`` scales an extra
    embedding-distance term computed on the masked images.
    """

    blur_sigma: float = 1.0
    threshold: float = 0.05
    feature_weight: float = 0.1

    def __post_init__(self):
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must lie in (0, 1)")


def env_change(model, image_i, image_j, mask_i=None, mask_j=None, psi=None):
    """Environment change between two images, ignoring robot-masked pixels."""
    a = np.asarray(image_i, dtype=np.float64)
    b = np.asarray(image_j, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    mask = np.zeros(a.shape, dtype=bool)
    for m in (mask_i, mask_j):
        if m is not None:
            mask |= np.asarray(m, dtype=bool)
    # zero masked pixels before blurring too, so robot pixels cannot bleed into the metric
    a = np.where(mask, 0.0, a)
    b = np.where(mask, 0.0, b)
    ba = np.where(mask, 0.0, gaussian_filter(a, model.blur_sigma, mode="nearest"))
    bb = np.where(mask, 0.0, gaussian_filter(b, model.blur_sigma, mode="nearest"))
    d = np.abs(ba - bb)
    d[d <= model.threshold] = 0.0
    value = float(np.sqrt(np.sum(d**2)))
    if model.feature_weight and psi is not None:
        fa, fb = psi(np.stack([a, b]))
        value += model.feature_weight * float(np.linalg.norm(fa - fb))
    return value
