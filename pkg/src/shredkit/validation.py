"""Input validation helpers used by the estimator-style classes."""

from __future__ import annotations

import numpy as np
from sklearn.exceptions import NotFittedError

from .errors import ShapeError


def as_float_matrix(x, name: str = "x", *, require_finite: bool = True) -> np.ndarray:
    """Coerce to a 2-D float64 array, optionally rejecting non-finite entries."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if require_finite and not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def as_float_array(x, name: str = "x", ndim: int | None = None) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise ShapeError(f"{name} must be {ndim}-D, got shape {arr.shape}")
    return arr


def check_fitted(estimator, attribute: str) -> None:
    """Raise NotFittedError unless ``estimator`` carries ``attribute``."""
    if getattr(estimator, attribute, None) is None:
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted yet; call fit() first"
        )
