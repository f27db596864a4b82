"""Small input validation helpers shared across the package."""
from __future__ import annotations

import numpy as np


def as_float_array(x, name: str = "array", dtype=np.float64) -> np.ndarray:
    """Coerce to a float ndarray, rejecting non-numeric input."""
    try:
        arr = np.asarray(x, dtype=dtype)
    except (TypeError, ValueError) as exc:
        raise TypeError(f"{name} must be numeric, got {type(x).__name__}") from exc
    return arr


def check_shape(arr: np.ndarray, shape: tuple, name: str = "array") -> np.ndarray:
    """Check dimensions against ``shape``; ``None`` entries match anything."""
    if arr.ndim != len(shape):
        raise ValueError(f"{name} must have rank {len(shape)}, got rank {arr.ndim}")
    for axis, want in enumerate(shape):
        if want is not None and arr.shape[axis] != want:
            raise ValueError(
                f"{name} has shape {arr.shape}, expected {want} on axis {axis}"
            )
    return arr


def check_finite(arr: np.ndarray, name: str = "array") -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_same_length(name_a: str, a, name_b: str, b) -> None:
    if len(a) != len(b):
        raise ValueError(
            f"{name_a} and {name_b} must have equal length, got {len(a)} and {len(b)}"
        )


def check_binary_labels(labels, name: str = "labels") -> np.ndarray:
    arr = np.asarray(labels)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-d, got rank {arr.ndim}")
    uniq = np.unique(arr)
    if not np.all(np.isin(uniq, (0, 1))):
        raise ValueError(f"{name} must contain only 0 and 1, got values {uniq[:8]}")
    return arr.astype(np.uint8)


def check_positive(value, name: str) -> None:
    if not value > 0:
        raise ValueError(f"{name} must be positive, got {value!r}")


def check_fraction(value, name: str) -> None:
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value!r}")
