"""Input validation helpers used by the core ops and the estimator facade."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError, ValidationError


def as_vector(x, name: str = "x", dim: int | None = None) -> np.ndarray:
    """Coerce to a 1-D float64 array, optionally enforcing its length."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise ShapeError(f"{name} must have length {dim}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


def as_matrix(x, name: str = "X", cols: int | None = None) -> np.ndarray:
    """Coerce to a 2-D float64 array, optionally enforcing the column count."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if cols is not None and arr.shape[1] != cols:
        raise ShapeError(f"{name} must have {cols} columns, got {arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


def check_same_length(a, b, name_a: str = "a", name_b: str = "b") -> None:
    if len(a) != len(b):
        raise ValidationError(
            f"{name_a} and {name_b} must have equal length ({len(a)} != {len(b)})"
        )


def check_positive(value, name: str) -> None:
    if not value > 0:
        raise ValidationError(f"{name} must be positive, got {value!r}")


def check_fraction(value, name: str, closed_top: bool = False) -> None:
    top_ok = value <= 1 if closed_top else value < 1
    if not (0 <= value and top_ok):
        raise ValidationError(f"{name} must lie in [0, 1{']' if closed_top else ')'}, got {value!r}")
