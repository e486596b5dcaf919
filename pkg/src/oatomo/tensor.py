"""Adaptive anisotropy tensors built from a structure tensor.

The structure tensor of a smoothed image is eigendecomposed per pixel and
its eigenvalues are replaced by ``(c(mu1 / mean(mu1); k), 1)``, where ``c``
is Weickert's diffusivity. The result weights the TV gradient so that edges
are regularized less across than along.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import convolve1d

__all__ = [
    "TensorField2D",
    "StructureTensorField",
    "gaussian_kernel",
    "gaussian_smooth",
    "structure_tensor",
    "eig_sym2",
    "weickert_c",
    "build_tensor_field",
    "identity_field",
    "modify_eigs_3d",
    "WEICKERT_CM",
    "WEICKERT_M",
]

WEICKERT_CM = 3.31488
WEICKERT_M = 4
FLAT_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class TensorField2D:
    """Symmetric per-pixel 2x2 matrices stored as ``(a11, a12, a22)``."""

    a11: np.ndarray
    a12: np.ndarray
    a22: np.ndarray
    sigma_px: float = 0.0
    rho_px: float = 0.0
    k: float = 1.0
    mu1_avg: float = 0.0

    @property
    def shape(self) -> tuple[int, int]:
        return self.a11.shape

    def matrices(self) -> np.ndarray:
        """Dense ``(ny, nx, 2, 2)`` view of the field."""
        return np.stack(
            [np.stack([self.a11, self.a12], -1), np.stack([self.a12, self.a22], -1)], -2
        )

    def is_identity(self) -> bool:
        return bool(np.all(self.a11 == 1.0) and np.all(self.a12 == 0.0) and np.all(self.a22 == 1.0))


@dataclass(frozen=True, eq=False)
class StructureTensorField:
    jxx: np.ndarray
    jxy: np.ndarray
    jyy: np.ndarray


def identity_field(shape) -> TensorField2D:
    return TensorField2D(np.ones(shape), np.zeros(shape), np.ones(shape))


def gaussian_kernel(std_px: float) -> np.ndarray:
    """Sampled Gaussian truncated at ``ceil(3 std)`` and renormalized to sum 1."""
    if std_px < 0:
        raise ValueError(f"std_px must be non-negative, got {std_px}")
    if std_px == 0:
        return np.ones(1)
    radius = int(math.ceil(3.0 * std_px))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / std_px) ** 2)
    return k / k.sum()


def gaussian_smooth(u, std_px: float) -> np.ndarray:
    """Separable Gaussian blur with replicate boundary; ``std_px = 0`` is the identity."""
    u = np.asarray(u, dtype=np.float64)
    kernel = gaussian_kernel(std_px)
    if kernel.size == 1:
        return u.copy()
    out = convolve1d(u, kernel, axis=0, mode="nearest")
    return convolve1d(out, kernel, axis=1, mode="nearest")


def _central_gradient(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = np.pad(u, 1, mode="edge")
    ux = 0.5 * (p[1:-1, 2:] - p[1:-1, :-2])
    uy = 0.5 * (p[2:, 1:-1] - p[:-2, 1:-1])
    return ux, uy


def structure_tensor(u0, sigma_px: float = 1.5, rho_px: float = 3.0) -> StructureTensorField:
    if sigma_px < 0 or rho_px < 0:
        raise ValueError("smoothing scales must be non-negative")
    us = gaussian_smooth(u0, sigma_px)
    ux, uy = _central_gradient(us)
    return StructureTensorField(
        gaussian_smooth(ux * ux, rho_px),
        gaussian_smooth(ux * uy, rho_px),
        gaussian_smooth(uy * uy, rho_px),
    )


def eig_sym2(jxx, jxy, jyy):
    """Closed-form eigen-decomposition of symmetric 2x2 matrices.

    Returns ``(mu1, mu2, v1)`` with ``mu1 >= mu2`` and ``v1`` the unit
    eigenvector of ``mu1`` stacked on the last axis. Where the eigenvalues
    coincide ``v1 = (1, 0)``. Works elementwise on arrays.
    """
    jxx = np.asarray(jxx, dtype=np.float64)
    jxy = np.asarray(jxy, dtype=np.float64)
    jyy = np.asarray(jyy, dtype=np.float64)
    mean = 0.5 * (jxx + jyy)
    half_gap = np.hypot(0.5 * (jxx - jyy), jxy)
    mu1 = mean + half_gap
    mu2 = mean - half_gap

    # two candidate eigenvectors for mu1; take the better conditioned one
    ax, ay = jxy, mu1 - jxx
    bx, by = mu1 - jyy, jxy
    na = np.hypot(ax, ay)
    nb = np.hypot(bx, by)
    use_a = na > nb
    vx = np.where(use_a, ax, bx)
    vy = np.where(use_a, ay, by)
    trace = np.abs(jxx) + np.abs(jyy)
    big = np.maximum(np.abs(vx), np.abs(vy))
    degenerate = (2.0 * half_gap <= 1e-14 * trace) | (big == 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        # rescale first so subnormal components normalize accurately
        vx = vx / big
        vy = vy / big
        nrm = np.hypot(vx, vy)
        vx = np.where(degenerate, 1.0, vx / nrm)
        vy = np.where(degenerate, 0.0, vy / nrm)
    return mu1, mu2, np.stack([vx, vy], axis=-1)


def weickert_c(s, k: float):
    """Weickert's diffusivity ``1 - exp(-cm / (s/k)^m)`` for ``s > 0``, else 1."""
    if not k > 0:
        raise ValueError(f"k must be positive, got {k}")
    s = np.asarray(s, dtype=np.float64)
    pos = s > 0
    ratio = np.where(pos, s, 1.0) / k
    with np.errstate(over="ignore", divide="ignore"):
        val = -np.expm1(-WEICKERT_CM / ratio**WEICKERT_M)
    out = np.where(pos, val, 1.0)
    return float(out) if out.ndim == 0 else out


def build_tensor_field(
    u0, sigma_px: float = 1.5, rho_px: float = 3.0, k: float = 1.0
) -> TensorField2D:
    """Adaptive tensor ``A = V diag(c(mu1/mu1_avg; k), 1) V^T`` from an image estimate.

    Flat images (mean ``mu1`` below ``1e-12 * mean(u0^2)``) give ``A = I``.
    """
    if not 0 < k <= 1:
        raise ValueError(f"k must lie in (0, 1], got {k}")
    u0 = np.asarray(u0, dtype=np.float64)
    st = structure_tensor(u0, sigma_px, rho_px)
    mu1, _, v1 = eig_sym2(st.jxx, st.jxy, st.jyy)
    mu1_avg = float(mu1.mean())
    scale = float(np.mean(u0 * u0))
    if scale == 0.0 or mu1_avg < FLAT_EPS * scale:
        ident = identity_field(u0.shape)
        return TensorField2D(
            ident.a11, ident.a12, ident.a22, sigma_px, rho_px, k, mu1_avg
        )
    c = weickert_c(mu1 / mu1_avg, k)
    vx, vy = v1[..., 0], v1[..., 1]
    cm1 = c - 1.0
    # I + (c - 1) v1 v1^T
    return TensorField2D(
        1.0 + cm1 * vx * vx,
        cm1 * vx * vy,
        1.0 + cm1 * vy * vy,
        sigma_px,
        rho_px,
        k,
        mu1_avg,
    )


def modify_eigs_3d(mu1: float, mu2: float, mu3: float, mu1_avg: float, k: float):
    """Modified eigenvalues ``(c(mu1/avg), c(mu2/avg), 1)`` for 3D structure tensors."""
    if not (mu1 >= mu2 >= mu3):
        raise ValueError(f"eigenvalues must be ordered mu1 >= mu2 >= mu3, got {mu1}, {mu2}, {mu3}")
    if not mu1_avg > 0:
        raise ValueError("mu1_avg must be positive")
    if not 0 < k <= 1:
        raise ValueError(f"k must lie in (0, 1], got {k}")
    return (
        float(weickert_c(mu1 / mu1_avg, k)),
        float(weickert_c(mu2 / mu1_avg, k)),
        1.0,
    )
