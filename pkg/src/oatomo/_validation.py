"""Input checks shared by the estimator layer and the CLI."""
from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils import check_array

from .core import ImageGrid2D, Sinogram
from .forward import SparseModelMatrix


def check_model(M) -> SparseModelMatrix:
    """Accept a :class:`SparseModelMatrix` or a fitted ``ForwardModel``."""
    if isinstance(M, SparseModelMatrix):
        return M
    inner = getattr(M, "matrix_", None)
    if isinstance(inner, SparseModelMatrix):
        return inner
    raise TypeError(
        f"expected a SparseModelMatrix or a fitted ForwardModel, got {type(M).__name__}"
    )


def check_positive(name: str, value, allow_zero: bool = False) -> float:
    if not isinstance(value, numbers.Real) or isinstance(value, bool):
        raise TypeError(f"{name} must be a real number, got {value!r}")
    ok = value >= 0 if allow_zero else value > 0
    if not ok or not np.isfinite(value):
        bound = ">= 0" if allow_zero else "> 0"
        raise ValueError(f"{name} must be finite and {bound}, got {value}")
    return float(value)


def check_count(name: str, value, minimum: int = 1) -> int:
    if not isinstance(value, numbers.Integral) or isinstance(value, bool) or value < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_batch(X, n_features: int, what: str) -> np.ndarray:
    """Coerce ``X`` to a finite 2D batch with ``n_features`` columns.

    A single image ``(ny, nx)``, a single sinogram ``(n_det, n_samples)``, a
    flat vector, or the matching containers are treated as a batch of one.
    """
    if isinstance(X, ImageGrid2D) or isinstance(X, Sinogram):
        X = X.values.reshape(1, -1)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1 or (X.ndim == 2 and X.size == n_features and X.shape[1] != n_features):
        X = X.reshape(1, -1)
    elif X.ndim > 2:
        X = X.reshape(X.shape[0], -1)
    X = check_array(X, dtype=np.float64, ensure_all_finite=True)
    if X.shape[1] != n_features:
        raise ValueError(f"{what} has {X.shape[1]} values per sample, expected {n_features}")
    return X
