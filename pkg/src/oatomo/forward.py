"""Discrete optoacoustic forward operator for circular detection geometries.

The image is expanded in bilinear (tent) basis functions centered on the
pixel centers, truncated to the grid footprint. For every detector and time
sample the operator integrates the image over the arc ``|r - r_d| = c t``
divided by ``c t``. Then a temporal derivative stencil turns those
integrals into pressure samples scaled by ``grueneisen / (4 pi c)``.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .core import DetectionGeometry, ImageGrid2D, detector_positions

__all__ = [
    "SparseModelMatrix",
    "build_model_matrix",
    "normalize_matrix",
    "apply",
    "apply_adjoint",
    "arc_integral_block",
    "time_derivative_stencil",
    "save_matrix",
    "load_matrix",
    "LIPSCHITZ_TARGET",
]

LIPSCHITZ_TARGET = 160.0
MATRIX_MAGIC = b"OAMM1\n"
_GL2 = (0.5 - 0.5 / math.sqrt(3.0), 0.5 + 0.5 / math.sqrt(3.0))


@dataclass(frozen=True, eq=False)
class SparseModelMatrix:
    """CSR model matrix plus the scale it was divided by during normalization."""

    csr: sp.csr_matrix
    norm_factor: float = 1.0

    def __post_init__(self):
        m = sp.csr_matrix(self.csr, dtype=np.float64)
        m.sum_duplicates()
        m.sort_indices()
        object.__setattr__(self, "csr", m)
        object.__setattr__(self, "norm_factor", float(self.norm_factor))

    @property
    def shape(self) -> tuple[int, int]:
        return self.csr.shape

    @property
    def n_rows(self) -> int:
        return self.csr.shape[0]

    @property
    def n_cols(self) -> int:
        return self.csr.shape[1]

    @property
    def nnz(self) -> int:
        return self.csr.nnz

    @property
    def indptr(self) -> np.ndarray:
        return self.csr.indptr

    @property
    def indices(self) -> np.ndarray:
        return self.csr.indices

    @property
    def data(self) -> np.ndarray:
        return self.csr.data

    def norm_inf(self) -> float:
        """Maximum absolute row sum."""
        return float(np.abs(self.csr).sum(axis=1).max()) if self.nnz else 0.0

    def norm_one(self) -> float:
        """Maximum absolute column sum."""
        return float(np.abs(self.csr).sum(axis=0).max()) if self.nnz else 0.0

    def lipschitz_estimate(self) -> float:
        return math.sqrt(self.norm_inf() * self.norm_one())

    def is_normalized(self, rtol: float = 1e-9) -> bool:
        return math.isclose(self.lipschitz_estimate(), LIPSCHITZ_TARGET, rel_tol=rtol)

    def toarray(self) -> np.ndarray:
        return self.csr.toarray()

    def __matmul__(self, x):
        return apply(self, x)


def apply(M: SparseModelMatrix, u) -> np.ndarray:
    """Forward projection ``M @ u``; ``u`` may be flat or shaped ``(ny, nx)``."""
    u = np.asarray(u, dtype=np.float64)
    if u.size != M.n_cols:
        raise ValueError(f"image has {u.size} values, matrix expects {M.n_cols}")
    return M.csr @ u.ravel()


def apply_adjoint(M: SparseModelMatrix, p) -> np.ndarray:
    """Back projection ``M.T @ p`` returned as a flat vector."""
    p = np.asarray(p, dtype=np.float64)
    if p.size != M.n_rows:
        raise ValueError(f"sinogram has {p.size} values, matrix expects {M.n_rows}")
    return M.csr.T @ p.ravel()


def normalize_matrix(M: SparseModelMatrix) -> SparseModelMatrix:
    """Scale ``M`` so that ``sqrt(||M||_inf * ||M||_1)`` equals 160."""
    est = M.lipschitz_estimate()
    if est == 0.0:
        raise ValueError("cannot normalize an all-zero model matrix")
    factor = est / LIPSCHITZ_TARGET
    return SparseModelMatrix(M.csr / factor, norm_factor=M.norm_factor * factor)


def _wrap(angle):
    return (angle + np.pi) % (2.0 * np.pi) - np.pi


def arc_integral_block(
    grid: ImageGrid2D,
    detector_xy,
    radii_mm,
    arc_step_frac: float = 0.25,
) -> sp.csr_matrix:
    """Arc integrals ``int H(r) / |r - r_d| ds`` for one detector.

    Row ``k`` integrates over the circle of radius ``radii_mm[k]`` around the
    detector, clipped to the grid footprint. The arc is cut wherever it
    crosses a row or column of pixel centers (the kinks of the tent basis)
    or the footprint edge. Each piece is walked in arc-length steps of at
    most ``arc_step_frac * pixel_mm``, each step integrated with two
    Gauss-Legendre nodes.
    """
    h = grid.pixel_mm
    nx, ny = grid.nx, grid.ny
    ax, ay = nx * h / 2.0, ny * h / 2.0
    dx, dy = float(detector_xy[0]), float(detector_xy[1])
    rho = np.asarray(radii_mm, dtype=np.float64)
    n_rows = rho.size

    dist = math.hypot(dx, dy)
    half_diag = math.hypot(ax, ay)
    if dist <= half_diag:
        raise ValueError("detector lies inside the image footprint")
    psi = math.atan2(-dy, -dx)
    half_width = math.asin(half_diag / dist)

    xs = np.concatenate([grid.x_coords(), [-ax, ax]])
    ys = np.concatenate([grid.y_coords(), [-ay, ay]])

    r = rho[:, None]
    with np.errstate(invalid="ignore"):
        cx = np.arccos((xs[None, :] - dx) / r)
        sy = np.arcsin((ys[None, :] - dy) / r)
    cand = np.concatenate([cx, -cx, sy, np.pi - sy], axis=1)
    cand = _wrap(cand - psi)
    cand = np.where(np.isfinite(cand), cand, half_width)
    cand = np.clip(cand, -half_width, half_width)
    edges = np.full((n_rows, 1), half_width)
    cand = np.sort(np.concatenate([-edges, cand, edges], axis=1), axis=1)

    lo, hi = cand[:, :-1], cand[:, 1:]
    length = hi - lo
    mid = psi + 0.5 * (lo + hi)
    mx = dx + r * np.cos(mid)
    my = dy + r * np.sin(mid)
    inside = (np.abs(mx) <= ax) & (np.abs(my) <= ay) & (length > 0)
    step = arc_step_frac * h
    counts = np.where(inside, np.ceil(length * r / step), 0).astype(np.int64)

    flat_counts = counts.ravel()
    total = int(flat_counts.sum())
    if total == 0:
        return sp.csr_matrix((n_rows, nx * ny))
    seg = np.repeat(np.arange(flat_counts.size), flat_counts)
    offsets = np.arange(total) - np.repeat(np.cumsum(flat_counts) - flat_counts, flat_counts)
    seg_len = length.ravel()[seg]
    step_phi = seg_len / flat_counts[seg]
    # two Gauss-Legendre nodes per step: exact for the (nearly) quadratic
    # restriction of the tent basis to a short arc piece
    start = lo.ravel()[seg] + offsets * step_phi
    beta = np.concatenate([start + _GL2[0] * step_phi, start + _GL2[1] * step_phi])
    dphi = np.concatenate([0.5 * step_phi, 0.5 * step_phi])
    seg = np.concatenate([seg, seg])
    row = seg // lo.shape[1]
    phi = psi + beta
    px = dx + rho[row] * np.cos(phi)
    py = dy + rho[row] * np.sin(phi)

    # step length / radius reduces to the angular step
    fx = px / h + (nx - 1) / 2.0
    fy = py / h + (ny - 1) / 2.0
    i0 = np.floor(fx).astype(np.int64)
    j0 = np.floor(fy).astype(np.int64)
    wx = fx - i0
    wy = fy - j0

    rows, cols, vals = [], [], []
    for di, wxi in ((0, 1.0 - wx), (1, wx)):
        ii = i0 + di
        for dj, wyj in ((0, 1.0 - wy), (1, wy)):
            jj = j0 + dj
            ok = (ii >= 0) & (ii < nx) & (jj >= 0) & (jj < ny)
            rows.append(row[ok])
            cols.append(jj[ok] * nx + ii[ok])
            vals.append((dphi * wxi * wyj)[ok])
    block = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_rows, nx * ny),
    ).tocsr()
    block.sum_duplicates()
    block.sort_indices()
    return block


def time_derivative_stencil(n_samples: int, dt: float) -> sp.csr_matrix:
    """Central differences in time with one-sided rows at both ends."""
    n = int(n_samples)
    if n < 3:
        raise ValueError("need at least 3 time samples")
    d = sp.lil_matrix((n, n))
    d[0, 0], d[0, 1] = -1.0 / dt, 1.0 / dt
    d[n - 1, n - 2], d[n - 1, n - 1] = -1.0 / dt, 1.0 / dt
    k = np.arange(1, n - 1)
    d[k, k - 1] = -0.5 / dt
    d[k, k + 1] = 0.5 / dt
    return d.tocsr()


def build_model_matrix(
    grid: ImageGrid2D,
    geom: DetectionGeometry,
    arc_step_frac: float = 0.25,
    validate: bool = True,
) -> SparseModelMatrix:
    """Assemble the model matrix, rows ordered detector-major, time-minor."""
    if not 0 < arc_step_frac <= 0.5:
        raise ValueError(f"arc_step_frac must lie in (0, 0.5], got {arc_step_frac}")
    if validate:
        geom.validate_for(grid)
    c = geom.sound_speed_mm_per_us
    radii = c * geom.times_us
    if np.any(radii <= 0):
        raise ValueError("time axis must be strictly positive")
    deriv = time_derivative_stencil(geom.n_samples, geom.dt_us)
    scale = geom.grueneisen / (4.0 * math.pi * c)
    blocks = []
    for d, xy in enumerate(detector_positions(geom)):
        block = arc_integral_block(grid, xy, radii, arc_step_frac)
        if block.nnz == 0:
            raise ValueError(
                f"detector {d}: no time sample intersects the image; "
                "check the geometry and time axis"
            )
        blocks.append(scale * (deriv @ block))
    return SparseModelMatrix(sp.vstack(blocks, format="csr"))


def save_matrix(M: SparseModelMatrix, path) -> None:
    """Write the binary CSR format (``OAMM1``)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MATRIX_MAGIC)
        fh.write(struct.pack("<QQQ", M.n_rows, M.n_cols, M.nnz))
        fh.write(M.indptr.astype("<u8").tobytes())
        fh.write(M.indices.astype("<u4").tobytes())
        fh.write(M.data.astype("<f8").tobytes())
        fh.write(struct.pack("<d", M.norm_factor))
    tmp.replace(path)


def load_matrix(path) -> SparseModelMatrix:
    raw = Path(path).read_bytes()
    if not raw.startswith(MATRIX_MAGIC):
        raise ValueError(f"{path}: not an OAMM1 matrix file")
    pos = len(MATRIX_MAGIC)
    n_rows, n_cols, nnz = struct.unpack_from("<QQQ", raw, pos)
    pos += 24
    expected = pos + 8 * (n_rows + 1) + 4 * nnz + 8 * nnz + 8
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    indptr = np.frombuffer(raw, "<u8", n_rows + 1, pos).astype(np.int64)
    pos += 8 * (n_rows + 1)
    indices = np.frombuffer(raw, "<u4", nnz, pos).astype(np.int32)
    pos += 4 * nnz
    data = np.frombuffer(raw, "<f8", nnz, pos).astype(np.float64)
    pos += 8 * nnz
    (norm_factor,) = struct.unpack_from("<d", raw, pos)
    csr = sp.csr_matrix((data, indices, indptr), shape=(n_rows, n_cols))
    return SparseModelMatrix(csr, norm_factor=norm_factor)

