"""Iterative reconstruction: LSQR, Tikhonov and primal-dual TV-type solvers.

The A2TV solver minimizes ``J_A(u) + lam/2 ||M u - p||^2`` where
``J_A(u) = sum ||A(x) grad u(x)||``, alternating dual projections with an
explicit primal step and the accelerated step schedule
``theta = 1/sqrt(1 + 2 gamma tau)``, ``tau *= theta``, ``sigma /= theta``.
The tensor ``A`` starts at the identity and is rebuilt from the current
image every ``tensor_update_stride`` iterations.

The TV-L1 solver minimizes ``||M u - p||^2 + mu ||Phi u||_1 + alpha TV(u)``
with ``Phi`` the orthonormal Haar transform, using the same scheme with a
third dual block.
"""
from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, aslinearoperator

from .forward import LIPSCHITZ_TARGET, SparseModelMatrix
from .operators import (
    _div,
    _grad,
    _tensor_apply,
    a2tv_value,
    haar_forward,
    haar_inverse,
    pointwise_norm,
    tv_value,
)
from .tensor import TensorField2D, build_tensor_field, identity_field

__all__ = [
    "SolverConfig",
    "PDState",
    "EnergyTrace",
    "UnnormalizedMatrixError",
    "lsqr",
    "tikhonov",
    "prox_fstar",
    "chambolle_pock_a2tv",
    "chambolle_pock_tvl1",
    "objective_a2tv",
    "objective_tvl1",
]

log = logging.getLogger(__name__)


class UnnormalizedMatrixError(ValueError):
    """Raised when a primal-dual solver receives a matrix that was not normalized."""


@dataclass
class SolverConfig:
    """Parameters shared by the primal-dual solvers.

    ``lam`` weights the fidelity of the A2TV problem; ``alpha`` and ``mu``
    weight the TV and wavelet terms of TV-L1. ``tensor_update_stride = 0``
    keeps the tensor frozen at the identity (plain isotropic TV).
    """

    iters: int = 3000
    lam: float = 0.01
    alpha: float = 0.0
    mu: float = 0.0
    k: float = 1.0
    sigma_px: float = 1.5
    rho_px: float = 3.0
    tensor_update_stride: int = 1
    gamma_factor: float = 0.7
    tau0: float = 0.5
    L_M: float = LIPSCHITZ_TARGET
    L_grad: float = 8.0
    L_wavelet: float = 1.0
    extrapolation: bool = False
    trace_stride: int = 10
    haar_levels: int = 3
    allow_unnormalized: bool = False

    def __post_init__(self):
        if int(self.iters) < 1:
            raise ValueError(f"iters must be >= 1, got {self.iters}")
        if self.tau0 <= 0:
            raise ValueError("tau0 must be positive")
        if self.tensor_update_stride < 0:
            raise ValueError("tensor_update_stride must be >= 0")
        if self.trace_stride < 1:
            raise ValueError("trace_stride must be >= 1")
        if self.alpha < 0 or self.mu < 0:
            raise ValueError("alpha and mu must be non-negative")
        if not self.lam > 0:
            raise ValueError(f"lam must be positive, got {self.lam}")
        if not 0 < self.k <= 1:
            raise ValueError(f"k must lie in (0, 1], got {self.k}")

    @property
    def L_a2tv(self) -> float:
        return self.L_M + self.L_grad

    @property
    def L_tvl1(self) -> float:
        return self.L_M + self.L_grad + self.L_wavelet


@dataclass
class PDState:
    u: np.ndarray
    q: np.ndarray
    z: np.ndarray
    w: np.ndarray | None
    tau: float
    sigma: float
    theta: float = 1.0
    n: int = 0


@dataclass
class EnergyTrace:
    """Objective history of a primal-dual run, one row per recorded iteration."""

    iters: list = field(default_factory=list)
    fidelity: list = field(default_factory=list)
    regularizer: list = field(default_factory=list)
    total: list = field(default_factory=list)
    tau: list = field(default_factory=list)
    sigma: list = field(default_factory=list)
    theta: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def append(self, n, fid, reg, tau, sigma, theta):
        self.iters.append(int(n))
        self.fidelity.append(float(fid))
        self.regularizer.append(float(reg))
        self.total.append(float(fid + reg))
        self.tau.append(float(tau))
        self.sigma.append(float(sigma))
        self.theta.append(float(theta))

    def __len__(self):
        return len(self.iters)

    def to_csv(self, path) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["iter", "fidelity_term", "regularizer_term", "total", "tau", "sigma"])
            for row in zip(self.iters, self.fidelity, self.regularizer, self.total, self.tau, self.sigma):
                writer.writerow([row[0]] + [repr(v) for v in row[1:]])
        tmp.replace(path)

    @classmethod
    def from_csv(cls, path) -> "EnergyTrace":
        trace = cls()
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                trace.iters.append(int(rec["iter"]))
                trace.fidelity.append(float(rec["fidelity_term"]))
                trace.regularizer.append(float(rec["regularizer_term"]))
                trace.total.append(float(rec["total"]))
                trace.tau.append(float(rec["tau"]))
                trace.sigma.append(float(rec["sigma"]))
        return trace


def _as_operator(M) -> LinearOperator:
    if isinstance(M, SparseModelMatrix):
        return aslinearoperator(M.csr)
    return aslinearoperator(M)


def _as_model(M) -> SparseModelMatrix:
    if isinstance(M, SparseModelMatrix):
        return M
    return SparseModelMatrix(sp.csr_matrix(M))


def _infer_shape(n_cols: int, shape) -> tuple[int, int]:
    if shape is not None:
        shape = (int(shape[0]), int(shape[1]))
        if shape[0] * shape[1] != n_cols:
            raise ValueError(f"image shape {shape} does not match {n_cols} matrix columns")
        return shape
    side = math.isqrt(n_cols)
    if side * side != n_cols:
        raise ValueError("image shape is ambiguous; pass shape=(ny, nx)")
    return (side, side)


def _check_rhs(op, p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64).ravel()
    if p.size != op.shape[0]:
        raise ValueError(f"data has {p.size} values, operator has {op.shape[0]} rows")
    return p


def lsqr(M, p, iters: int = 100, atol: float = 0.0):
    """Paige-Saunders LSQR for ``min ||M u - p||_2`` starting from zero.

    Stops after ``iters`` iterations, when the residual norm drops to
    ``atol * ||p||``, or on breakdown. Returns the iterate and the residual
    norm estimates (starting with ``||p||``), which are non-increasing.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    op = _as_operator(M)
    p = _check_rhs(op, p)
    x = np.zeros(op.shape[1])
    beta = float(np.linalg.norm(p))
    residuals = [beta]
    if beta == 0.0:
        return x, np.array(residuals)
    uvec = p / beta
    v = op.rmatvec(uvec)
    alpha = float(np.linalg.norm(v))
    if alpha == 0.0:
        return x, np.array(residuals)
    v = v / alpha
    w = v.copy()
    phibar, rhobar = beta, alpha
    stop = atol * residuals[0]
    for _ in range(int(iters)):
        uvec = op.matvec(v) - alpha * uvec
        beta = float(np.linalg.norm(uvec))
        if beta > 0:
            uvec /= beta
        v = op.rmatvec(uvec) - beta * v
        alpha = float(np.linalg.norm(v))
        if alpha > 0:
            v /= alpha
        rho = math.hypot(rhobar, beta)
        c, s = rhobar / rho, beta / rho
        theta = s * alpha
        rhobar = -c * alpha
        phi = c * phibar
        phibar = s * phibar
        x += (phi / rho) * w
        w = v - (theta / rho) * w
        residuals.append(abs(phibar))
        if abs(phibar) <= stop or alpha == 0.0:
            break
    return x, np.array(residuals)


def tikhonov(M, p, lam: float, iters: int = 100, atol: float = 0.0):
    """``min ||M u - p||^2 + lam ||u||^2`` via LSQR on ``[M; sqrt(lam) I]``."""
    if lam < 0:
        raise ValueError("lam must be non-negative")
    op = _as_operator(M)
    p = _check_rhs(op, p)
    m, n = op.shape
    root = math.sqrt(lam)

    def matvec(x):
        x = np.ravel(x)
        return np.concatenate([op.matvec(x), root * x])

    def rmatvec(y):
        y = np.ravel(y)
        return op.rmatvec(y[:m]) + root * y[m:]

    stacked = LinearOperator((m + n, n), matvec=matvec, rmatvec=rmatvec, dtype=np.float64)
    u, _ = lsqr(stacked, np.concatenate([p, np.zeros(n)]), iters=iters, atol=atol)
    return u


def _project_ball(z: np.ndarray, radius: float = 1.0) -> np.ndarray:
    if radius == 0.0:
        return np.zeros_like(z)
    scale = np.maximum(1.0, pointwise_norm(z) / radius)
    return z / scale


def prox_fstar(q_tilde, z_tilde, sigma_step: float, lam: float, p):
    """Proximal map of the dual functional.

    ``q = (q_tilde - sigma p) / (1 + sigma/lam)`` and ``z`` is ``z_tilde``
    projected pixelwise onto the unit Euclidean ball. ``z_tilde`` is a
    ``(2, ny, nx)`` array (or a :class:`GradientField2D`).
    """
    if sigma_step <= 0 or lam <= 0:
        raise ValueError("sigma_step and lam must be positive")
    q_tilde = np.asarray(q_tilde, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if q_tilde.shape != p.shape:
        raise ValueError("q_tilde and p shapes differ")
    q = (q_tilde - sigma_step * p) / (1.0 + sigma_step / lam)
    z = _project_ball(np.asarray(z_tilde, dtype=np.float64))
    return q, z


def objective_a2tv(u, A: TensorField2D | None, M, p, lam: float) -> float:
    u = np.asarray(u, dtype=np.float64)
    if A is None:
        A = identity_field(u.shape)
    r = _as_model(M) @ u - np.ravel(p)
    return a2tv_value(A, u) + 0.5 * lam * float(r @ r)


def objective_tvl1(u, M, p, alpha: float, mu: float, levels: int = 3) -> float:
    u = np.asarray(u, dtype=np.float64)
    r = _as_model(M) @ u - np.ravel(p)
    val = float(r @ r) + alpha * tv_value(u)
    if mu:
        val += mu * float(np.abs(haar_forward(u, levels)).sum())
    return val


def _check_normalized(M: SparseModelMatrix, cfg: SolverConfig) -> None:
    if M.is_normalized(1e-6):
        return
    msg = (
        f"model matrix is not normalized: sqrt(||M||_inf ||M||_1) = "
        f"{M.lipschitz_estimate():.6g}, expected {LIPSCHITZ_TARGET:g}"
    )
    if cfg.allow_unnormalized:
        warnings.warn(msg, stacklevel=3)
    else:
        raise UnnormalizedMatrixError(msg + " (set allow_unnormalized to override)")


def chambolle_pock_a2tv(M, p, cfg: SolverConfig | None = None, shape=None, callback=None):
    """Reconstruct with adaptive anisotropic TV.

    Returns ``(u, trace)`` with ``u`` shaped ``(ny, nx)``. ``callback``, if
    given, is called as ``callback(state, A)`` after every iteration.
    """
    cfg = cfg or SolverConfig()
    if cfg.lam <= 0:
        raise ValueError("lam must be positive")
    M = _as_model(M)
    _check_normalized(M, cfg)
    shape = _infer_shape(M.n_cols, shape)
    p = _check_rhs(aslinearoperator(M.csr), p)

    L = cfg.L_a2tv
    gamma = cfg.gamma_factor * cfg.lam
    tau = cfg.tau0
    sigma = 1.0 / (cfg.tau0 * L * L)
    u = np.zeros(shape)
    st = PDState(u=u, q=np.zeros(M.n_rows), z=np.zeros((2,) + shape), w=None, tau=tau, sigma=sigma)
    A = identity_field(shape)
    adaptive = cfg.tensor_update_stride > 0
    ubar = u
    Mu_cache = None
    trace = EnergyTrace(
        meta={
            "method": "a2tv",
            "lam": cfg.lam,
            "k": cfg.k,
            "tensor_update_stride": cfg.tensor_update_stride,
            "extrapolation": cfg.extrapolation,
            "L": L,
        }
    )
    csr, csr_t = M.csr, M.csr.T.tocsr()

    for n in range(cfg.iters):
        Mu = Mu_cache if Mu_cache is not None else csr @ ubar.ravel()
        st.q = (st.q + st.sigma * (Mu - p)) / (1.0 + st.sigma / cfg.lam)
        st.z = _project_ball(st.z + st.sigma * _tensor_apply(A, _grad(ubar)))
        # K* = [M^T, grad_A^T]; grad_A^T z = -div(A z)
        u_new = st.u - st.tau * ((csr_t @ st.q).reshape(shape) - _div(_tensor_apply(A, st.z)))
        st.theta = 1.0 / math.sqrt(1.0 + 2.0 * gamma * st.tau)
        st.tau *= st.theta
        st.sigma /= st.theta
        ubar = u_new + st.theta * (u_new - st.u) if cfg.extrapolation else u_new
        st.u = u_new
        st.n = n + 1
        if adaptive and st.n % cfg.tensor_update_stride == 0:
            A = build_tensor_field(st.u, cfg.sigma_px, cfg.rho_px, cfg.k)
        Mu_cache = None
        if st.n % cfg.trace_stride == 0 or st.n == cfg.iters:
            Mu_new = csr @ st.u.ravel()
            r = Mu_new - p
            fid = 0.5 * cfg.lam * float(r @ r)
            reg = float(pointwise_norm(_tensor_apply(A, _grad(st.u))).sum())
            trace.append(st.n, fid, reg, st.tau, st.sigma, st.theta)
            if not cfg.extrapolation:
                Mu_cache = Mu_new
        if callback is not None:
            callback(st, A)
    trace.meta["final_tensor"] = A
    return st.u, trace


def chambolle_pock_tvl1(M, p, cfg: SolverConfig | None = None, shape=None, callback=None):
    """Reconstruct with combined TV and Haar-L1 regularization.

    The fidelity ``||M u - p||^2`` corresponds to ``lam = 2`` in the A2TV
    dual prox, so acceleration uses ``gamma = 2 * gamma_factor``. The TV and
    wavelet duals are projected onto balls of radius ``alpha`` and ``mu``.
    """
    cfg = cfg or SolverConfig()
    M = _as_model(M)
    _check_normalized(M, cfg)
    shape = _infer_shape(M.n_cols, shape)
    p = _check_rhs(aslinearoperator(M.csr), p)
    use_wavelet = cfg.mu > 0
    levels = cfg.haar_levels
    if use_wavelet:
        m = 1 << levels
        if shape[0] % m or shape[1] % m:
            raise ValueError(f"image shape {shape} is not divisible by 2**{levels}")

    lam_eq = 2.0
    L = cfg.L_tvl1
    gamma = cfg.gamma_factor * lam_eq
    st = PDState(
        u=np.zeros(shape),
        q=np.zeros(M.n_rows),
        z=np.zeros((2,) + shape),
        w=np.zeros(shape) if use_wavelet else None,
        tau=cfg.tau0,
        sigma=1.0 / (cfg.tau0 * L * L),
    )
    ubar = st.u
    Mu_cache = None
    trace = EnergyTrace(
        meta={"method": "tvl1", "alpha": cfg.alpha, "mu": cfg.mu, "levels": levels,
              "extrapolation": cfg.extrapolation, "L": L}
    )
    csr, csr_t = M.csr, M.csr.T.tocsr()

    for n in range(cfg.iters):
        Mu = Mu_cache if Mu_cache is not None else csr @ ubar.ravel()
        st.q = (st.q + st.sigma * (Mu - p)) / (1.0 + st.sigma / lam_eq)
        st.z = _project_ball(st.z + st.sigma * _grad(ubar), cfg.alpha)
        step = (csr_t @ st.q).reshape(shape) - _div(st.z)
        if use_wavelet:
            st.w = np.clip(st.w + st.sigma * haar_forward(ubar, levels), -cfg.mu, cfg.mu)
            step += haar_inverse(st.w, levels)
        u_new = st.u - st.tau * step
        st.theta = 1.0 / math.sqrt(1.0 + 2.0 * gamma * st.tau)
        st.tau *= st.theta
        st.sigma /= st.theta
        ubar = u_new + st.theta * (u_new - st.u) if cfg.extrapolation else u_new
        st.u = u_new
        st.n = n + 1
        Mu_cache = None
        if st.n % cfg.trace_stride == 0 or st.n == cfg.iters:
            Mu_new = csr @ st.u.ravel()
            r = Mu_new - p
            fid = float(r @ r)
            reg = cfg.alpha * tv_value(st.u) if cfg.alpha else 0.0
            if use_wavelet:
                reg += cfg.mu * float(np.abs(haar_forward(st.u, levels)).sum())
            trace.append(st.n, fid, reg, st.tau, st.sigma, st.theta)
            if not cfg.extrapolation:
                Mu_cache = Mu_new
        if callback is not None:
            callback(st, None)
    return st.u, trace
