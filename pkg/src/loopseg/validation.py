"""Input validation helpers shared across the package."""

from __future__ import annotations

import numpy as np


def as_f64(x, name: str = "array") -> np.ndarray:
    """Coerce to a C-contiguous float64 array; 0-dim input stays 0-dim."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
        arr = np.ascontiguousarray(arr)
    return arr


def check_finite(x, name: str = "array") -> np.ndarray:
    arr = as_f64(x, name)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


def check_matrix(x, name: str = "matrix") -> np.ndarray:
    arr = as_f64(x, name)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def check_binary(x, name: str = "array") -> np.ndarray:
    """Validate that every value is exactly 0 or 1; returns float64."""
    arr = as_f64(x, name)
    if arr.size and not np.all((arr == 0.0) | (arr == 1.0)):
        bad = arr[(arr != 0.0) & (arr != 1.0)].ravel()[0]
        raise ValueError(f"{name} must be binary (0/1); found {bad!r}")
    return arr


def check_mask(x, name: str = "mask") -> np.ndarray:
    arr = check_binary(x, name)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-D binary mask, got shape {arr.shape}")
    return arr


def check_same_shape(a: np.ndarray, b: np.ndarray, name_a: str, name_b: str) -> None:
    if a.shape != b.shape:
        raise ValueError(
            f"{name_a} and {name_b} must share a shape: {a.shape} vs {b.shape}"
        )


def check_unit(value: float, name: str) -> float:
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value}")
    return value


def check_positive(value: int, name: str) -> int:
    value = int(value)
    if value < 1:
        raise ValueError(f"{name} must be >= 1, got {value}")
    return value
