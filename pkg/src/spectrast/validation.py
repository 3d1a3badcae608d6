"""Input validation helpers, in the spirit of sklearn's check_* utilities."""

from __future__ import annotations

import numpy as np

from .errors import NonFiniteValuesError


def check_matrix(data, name: str = "data", dtype=np.float32) -> np.ndarray:
    """Copy to a 2-D C-contiguous array of the given dtype and check finiteness.

    Always copies, so freezing the result never locks a caller's array.
    """
    arr = np.array(data, dtype=dtype, order="C", copy=True)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must have at least one row and one column, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValuesError(f"{name} contains non-finite values")
    return arr


def check_shape_match(a_shape: tuple[int, int], b_shape: tuple[int, int],
                      what: str = "inputs") -> None:
    if a_shape != b_shape:
        raise ValueError(f"shape mismatch between {what}: {a_shape} vs {b_shape}")


def check_probability(value: float, name: str) -> float:
    value = float(value)
    if not (0.0 <= value <= 1.0) or not np.isfinite(value):
        raise ValueError(f"{name} must be a probability in [0, 1], got {value}")
    return value


def check_positive(value, name: str):
    if value <= 0:
        raise ValueError(f"{name} must be positive, got {value}")
    return value


def check_count(value: int, name: str, minimum: int = 1) -> int:
    value = int(value)
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return value
