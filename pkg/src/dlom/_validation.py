"""Input checks shared across modules."""

from __future__ import annotations

import numpy as np


class ValidationError(ValueError):
    """Raised when an input violates a documented contract."""


def as_float_array(x, name: str = "x", ndim: int | None = None) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise ValidationError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


def check_last_dim(arr: np.ndarray, size: int, name: str) -> None:
    if arr.shape[-1] != size:
        raise ValidationError(f"{name} has trailing dimension {arr.shape[-1]}, expected {size}")


def check_levels(levels, k_max: int, name: str = "levels") -> np.ndarray:
    arr = np.asarray(levels)
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.equal(np.mod(arr, 1), 0)):
            raise ValidationError(f"{name} must be integers")
        arr = arr.astype(np.int64)
    arr = arr.astype(np.int64, copy=False)
    if arr.size and (arr.min() < 0 or arr.max() > k_max):
        bad = arr[(arr < 0) | (arr > k_max)][0]
        raise ValidationError(f"{name} contains level {bad} outside 0..{k_max}")
    return arr
