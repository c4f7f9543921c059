"""Input validation helpers shared by the estimators and free functions."""

from __future__ import annotations

import numpy as np


class DataError(ValueError):
    """Raised when input data cannot support the requested computation."""


def check_series(x, *, min_length: int = 2, name: str = "series") -> np.ndarray:
    """Return ``x`` as a finite 1-d float array of at least ``min_length`` points."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise DataError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size < min_length:
        raise DataError(f"{name} needs at least {min_length} points, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite values")
    return arr


def check_positive(x, *, name: str = "values") -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr <= 0):
        raise DataError(f"{name}: lognormal requires positive data")
    return arr


def check_day_matrix(X, *, min_days: int = 1, name: str = "X", allow_nan: bool = False) -> np.ndarray:
    """Validate a days-by-bins matrix of travel times; NaN marks a missing cell if allowed."""
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 1:
        arr = arr[np.newaxis, :]
    if arr.ndim != 2:
        raise DataError(f"{name} must be a (days, bins) matrix, got shape {arr.shape}")
    if arr.shape[0] < min_days:
        raise DataError(f"{name} needs at least {min_days} days, got {arr.shape[0]}")
    if arr.shape[1] < 1:
        raise DataError(f"{name} has no bins")
    bad = np.isinf(arr) if allow_nan else ~np.isfinite(arr)
    if np.any(bad):
        raise DataError(f"{name} contains non-finite values")
    return arr


def check_fitted(estimator, attribute: str) -> None:
    if not hasattr(estimator, attribute):
        from sklearn.exceptions import NotFittedError

        raise NotFittedError(
            f"This {type(estimator).__name__} instance is not fitted yet; call 'fit' first."
        )


def check_significance(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"significance must lie in (0, 1), got {alpha}")
    return alpha
