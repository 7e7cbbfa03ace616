"""Input checks shared by the estimators and pipeline stages."""

from __future__ import annotations

import numpy as np


def check_patches(X, input_shape=None, dtype=np.float32) -> np.ndarray:
    """Validate a patch stack (n, C, H, W) of finite values."""
    X = np.asarray(X)
    if X.ndim == 3:
        X = X[:, None]
    if X.ndim != 4:
        raise ValueError(f"patches must be (n, C, H, W), got shape {X.shape}")
    if not np.issubdtype(X.dtype, np.number):
        raise TypeError(f"patches must be numeric, got {X.dtype}")
    if input_shape is not None and tuple(X.shape[1:]) != tuple(input_shape):
        raise ValueError(f"patches have shape {X.shape[1:]}, model expects {tuple(input_shape)}")
    X = X.astype(dtype, copy=False)
    if not np.all(np.isfinite(X)):
        raise ValueError("patches contain NaN or inf")
    return X


def check_binary_labels(y, n: int | None = None) -> np.ndarray:
    """Labels as int64 in {0, 1}."""
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError("labels must be one-dimensional")
    if n is not None and len(y) != n:
        raise ValueError(f"got {len(y)} labels for {n} samples")
    if y.dtype == bool:
        return y.astype(np.int64)
    if not np.all(np.isin(y, (0, 1))):
        raise ValueError("labels must be 0/1")
    return y.astype(np.int64)


def check_probabilities(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if not np.all((p >= 0) & (p <= 1)):
        raise ValueError("probabilities must lie in [0, 1]")
    return p


def check_seed(seed) -> int:
    if isinstance(seed, (bool, np.bool_)) or not isinstance(seed, (int, np.integer)):
        raise TypeError(f"seed must be an integer, got {type(seed).__name__}")
    if seed < 0:
        raise ValueError("seed must be non-negative")
    return int(seed)
