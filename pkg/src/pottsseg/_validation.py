"""Input checks shared by the estimators."""

from __future__ import annotations

import numbers

import numpy as np

from .grid import BOUNDARIES


def check_image(X, name="X") -> np.ndarray:
    """Return ``X`` as a finite float array of shape ``(height, width, 3)``."""
    arr = np.asarray(X, dtype=float)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"{name} must be an RGB image of shape (height, width, 3), got {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or infinite values")
    return arr


def check_n_labels(q) -> int:
    if isinstance(q, bool) or not isinstance(q, numbers.Integral) or q < 2:
        raise ValueError(f"n_labels must be an integer >= 2, got {q!r}")
    return int(q)


def check_boundary(boundary) -> str:
    if boundary not in BOUNDARIES:
        raise ValueError(f"boundary must be one of {BOUNDARIES}, got {boundary!r}")
    return boundary


def check_seed(seed) -> int:
    if seed is None:
        return 0
    if isinstance(seed, bool) or not isinstance(seed, numbers.Integral):
        raise ValueError(f"random_state must be an integer or None, got {seed!r}")
    return int(seed)
