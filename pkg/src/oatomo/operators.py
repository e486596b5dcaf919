"""Finite-difference operators, TV functionals and the orthonormal Haar transform.

Images are ``(ny, nx)`` arrays; ``gx`` differences along axis 1 (x), ``gy``
along axis 0 (y). Gradients use backward differences with a zero first
column/row, so ``divergence`` is the forward-difference negative adjoint.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

__all__ = [
    "GradientField2D",
    "gradient",
    "divergence",
    "tv_value",
    "adaptive_gradient",
    "adaptive_divergence",
    "a2tv_value",
    "haar_forward",
    "haar_inverse",
    "pointwise_norm",
]

GRADIENT_NORM_SQ = 8.0  # bound on ||grad||_2^2


class GradientField2D(NamedTuple):
    gx: np.ndarray
    gy: np.ndarray

    def as_array(self) -> np.ndarray:
        return np.stack([self.gx, self.gy])

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.gx, self.gy)


def _as_image(u) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 2:
        raise ValueError(f"expected a 2D image, got shape {u.shape}")
    return u


def _as_field(g) -> np.ndarray:
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 3 or g.shape[0] != 2:
        raise ValueError(f"expected a (2, ny, nx) field, got shape {g.shape}")
    return g


def _grad(u: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    if out is None:
        out = np.empty((2,) + u.shape)
    out[0, :, 0] = 0.0
    np.subtract(u[:, 1:], u[:, :-1], out=out[0, :, 1:])
    out[1, 0, :] = 0.0
    np.subtract(u[1:, :], u[:-1, :], out=out[1, 1:, :])
    return out


def _div(g: np.ndarray) -> np.ndarray:
    gx, gy = g[0], g[1]
    d = np.zeros(gx.shape)
    d[:, :-1] += gx[:, 1:]
    d[:, 1:] -= gx[:, 1:]
    d[:-1, :] += gy[1:, :]
    d[1:, :] -= gy[1:, :]
    return d


def pointwise_norm(g: np.ndarray) -> np.ndarray:
    """Per-pixel Euclidean magnitude of a ``(2, ny, nx)`` field."""
    return np.sqrt(g[0] * g[0] + g[1] * g[1])


def gradient(u) -> GradientField2D:
    """Backward differences; the first column (row) of gx (gy) is zero."""
    g = _grad(_as_image(u))
    return GradientField2D(g[0], g[1])


def divergence(g) -> np.ndarray:
    """Negative adjoint of :func:`gradient`: ``<grad u, g> = -<u, div g>``."""
    return _div(_as_field(g))


def tv_value(u) -> float:
    """Isotropic discrete total variation."""
    return float(pointwise_norm(_grad(_as_image(u))).sum())


def _tensor_apply(A, g: np.ndarray) -> np.ndarray:
    a11, a12, a22 = A.a11, A.a12, A.a22
    return np.stack([a11 * g[0] + a12 * g[1], a12 * g[0] + a22 * g[1]])


def _check_tensor(A, shape) -> None:
    if A.a11.shape != shape:
        raise ValueError(f"tensor field shape {A.a11.shape} does not match image {shape}")


def adaptive_gradient(A, u) -> GradientField2D:
    """Per-pixel ``A(x) @ grad u`` for a :class:`~oatomo.tensor.TensorField2D`."""
    u = _as_image(u)
    _check_tensor(A, u.shape)
    g = _tensor_apply(A, _grad(u))
    return GradientField2D(g[0], g[1])


def adaptive_divergence(A, z) -> np.ndarray:
    """Adjoint of :func:`adaptive_gradient`.

    Satisfies ``<adaptive_gradient(A, u), z> = <u, adaptive_divergence(A, z)>``,
    i.e. it equals ``-divergence(A z)`` (A is symmetric).
    """
    z = _as_field(z)
    _check_tensor(A, z.shape[1:])
    return -_div(_tensor_apply(A, z))


def a2tv_value(A, u) -> float:
    """Sum over pixels of ``||A(x) grad u(x)||_2``."""
    u = _as_image(u)
    _check_tensor(A, u.shape)
    return float(pointwise_norm(_tensor_apply(A, _grad(u))).sum())


_S = 1.0 / np.sqrt(2.0)


def _check_haar(shape, levels: int) -> None:
    if levels < 1:
        raise ValueError(f"levels must be >= 1, got {levels}")
    m = 1 << levels
    if shape[0] % m or shape[1] % m:
        raise ValueError(f"image shape {shape} is not divisible by 2**{levels}")


def haar_forward(u, levels: int = 3) -> np.ndarray:
    """Orthonormal 2D Haar analysis in the usual nested (Mallat) layout.

    Each level filters rows then columns and recurses on the top-left
    low-pass band.
    """
    w = np.array(_as_image(u), dtype=np.float64, copy=True)
    _check_haar(w.shape, levels)
    ny, nx = w.shape
    for _ in range(levels):
        band = w[:ny, :nx]
        lo = (band[:, 0::2] + band[:, 1::2]) * _S
        hi = (band[:, 0::2] - band[:, 1::2]) * _S
        band = np.concatenate([lo, hi], axis=1)
        lo = (band[0::2, :] + band[1::2, :]) * _S
        hi = (band[0::2, :] - band[1::2, :]) * _S
        w[:ny, :nx] = np.concatenate([lo, hi], axis=0)
        ny //= 2
        nx //= 2
    return w


def haar_inverse(w, levels: int = 3) -> np.ndarray:
    """Exact inverse (and transpose) of :func:`haar_forward`."""
    u = np.array(_as_image(w), dtype=np.float64, copy=True)
    _check_haar(u.shape, levels)
    ny0, nx0 = u.shape
    for lev in reversed(range(levels)):
        ny, nx = ny0 >> lev, nx0 >> lev
        band = u[:ny, :nx]
        lo, hi = band[: ny // 2, :], band[ny // 2 :, :]
        rows = np.empty_like(band)
        rows[0::2, :] = (lo + hi) * _S
        rows[1::2, :] = (lo - hi) * _S
        lo, hi = rows[:, : nx // 2], rows[:, nx // 2 :]
        cols = np.empty_like(band)
        cols[:, 0::2] = (lo + hi) * _S
        cols[:, 1::2] = (lo - hi) * _S
        u[:ny, :nx] = cols
    return u
