"""Input validation shared by the estimators."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array


def check_latents(Z, allow_single: bool = False) -> np.ndarray:
    """Finite 2-D float64 array of latent codes (rows are codes)."""
    Z = np.asarray(Z, dtype=np.float64)
    if allow_single and Z.ndim == 1:
        Z = Z[None, :]
    return check_array(Z, dtype=np.float64, ensure_min_samples=1)


def check_images(X, dtype=np.float32) -> tuple[np.ndarray, tuple[int, ...]]:
    """Flatten (n, H, W) or (n, D) images to (n, D); also return the per-item shape."""
    X = np.asarray(X)
    if X.ndim < 2:
        raise ValueError(f"expected a batch of images, got shape {X.shape}")
    item_shape = X.shape[1:]
    flat = X.reshape(len(X), int(np.prod(item_shape)))
    flat = check_array(flat, dtype=dtype, ensure_min_samples=0)
    return flat, item_shape


def as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
