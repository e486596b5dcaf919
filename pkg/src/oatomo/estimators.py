"""Estimator-style wrappers around the forward model and the solvers.

Samples are rows: an image batch has shape ``(n_images, ny * nx)`` and a
sinogram batch ``(n_sinograms, n_detectors * n_samples)``. Reconstructors
``transform`` sinograms into images and ``inverse_transform`` images back
into sinograms. ``score`` returns the negative mean absolute distance, so
larger is better as usual.

Example
-------
>>> fm = ForwardModel(nx=32, ny=32, n_detectors=64).fit()
>>> P = fm.transform(U)                     # doctest: +SKIP
>>> rec = A2TVReconstructor(fm, lam=0.01, iters=500).fit()
>>> U_hat = rec.transform(P)                # doctest: +SKIP
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import solvers
from ._validation import check_batch, check_count, check_model, check_positive
from .core import ImageGrid2D, make_geometry
from .forward import build_model_matrix, normalize_matrix

__all__ = [
    "ForwardModel",
    "LSQRReconstructor",
    "TikhonovReconstructor",
    "TVL1Reconstructor",
    "A2TVReconstructor",
]


class ForwardModel(TransformerMixin, BaseEstimator):
    """Builds (and by default normalizes) the model matrix for a grid and arc.

    Parameters
    ----------
    nx, ny : int
        Grid size in pixels.
    pixel_mm : float
    radius_mm, arc_deg : float
        Detection circle radius and angular coverage.
    n_detectors : int
    sound_speed : float
        Speed of sound in mm/us.
    arc_step_frac : float
        Arc sampling step as a fraction of the pixel size.
    normalize : bool
        Scale the matrix to the solvers' Lipschitz convention.
    """

    def __init__(
        self,
        nx=64,
        ny=64,
        pixel_mm=0.1,
        radius_mm=40.0,
        arc_deg=270.0,
        n_detectors=128,
        sound_speed=1.5,
        grueneisen=1.0,
        arc_step_frac=0.25,
        normalize=True,
    ):
        self.nx = nx
        self.ny = ny
        self.pixel_mm = pixel_mm
        self.radius_mm = radius_mm
        self.arc_deg = arc_deg
        self.n_detectors = n_detectors
        self.sound_speed = sound_speed
        self.grueneisen = grueneisen
        self.arc_step_frac = arc_step_frac
        self.normalize = normalize

    def fit(self, X=None, y=None):
        nx = check_count("nx", self.nx, 2)
        ny = check_count("ny", self.ny, 2)
        check_count("n_detectors", self.n_detectors)
        self.grid_ = ImageGrid2D(nx, ny, check_positive("pixel_mm", self.pixel_mm))
        self.geometry_ = make_geometry(
            self.grid_, self.radius_mm, self.arc_deg, self.n_detectors, self.sound_speed, self.grueneisen
        )
        M = build_model_matrix(self.grid_, self.geometry_, self.arc_step_frac)
        self.matrix_ = normalize_matrix(M) if self.normalize else M
        self.n_features_in_ = nx * ny
        return self

    def transform(self, X):
        """Simulate sinograms for a batch of images."""
        check_is_fitted(self, "matrix_")
        X = check_batch(X, self.matrix_.n_cols, "image batch")
        return np.asarray((self.matrix_.csr @ X.T).T)

    def inverse_transform(self, P):
        """Back-project sinograms (adjoint, not an inverse)."""
        check_is_fitted(self, "matrix_")
        P = check_batch(P, self.matrix_.n_rows, "sinogram batch")
        return np.asarray((self.matrix_.csr.T @ P.T).T)


class _Reconstructor(TransformerMixin, BaseEstimator):
    """Shared plumbing: model checks, batching, scoring."""

    def fit(self, X=None, y=None):
        self._validate_params_()
        self.model_ = check_model(self.model)
        self.n_features_in_ = self.model_.n_rows
        grid = getattr(self.model, "grid_", None)
        self.image_shape_ = solvers._infer_shape(self.model_.n_cols, grid.shape if grid is not None else None)
        self.traces_ = []
        return self

    def _validate_params_(self):
        check_count("iters", self.iters)

    def transform(self, X):
        check_is_fitted(self, "model_")
        P = check_batch(X, self.model_.n_rows, "sinogram batch")
        self.traces_ = []
        out = np.empty((P.shape[0], self.model_.n_cols))
        for i, p in enumerate(P):
            u, trace = self._solve(p)
            out[i] = np.ravel(u)
            self.traces_.append(trace)
        return out

    def predict(self, X):
        """Reconstructions shaped ``(n, ny, nx)``."""
        return self.transform(X).reshape((-1,) + self.image_shape_)

    def inverse_transform(self, U):
        check_is_fitted(self, "model_")
        U = check_batch(U, self.model_.n_cols, "image batch")
        return np.asarray((self.model_.csr @ U.T).T)

    def score(self, X, y):
        """Negative mean absolute distance to the reference images ``y``."""
        U = self.transform(X)
        ref = check_batch(y, self.model_.n_cols, "reference batch")
        if ref.shape != U.shape:
            raise ValueError("reference batch does not match the number of sinograms")
        return -float(np.mean(np.abs(U - ref)))


class LSQRReconstructor(_Reconstructor):
    """Unregularized least squares by LSQR."""

    def __init__(self, model=None, iters=50, atol=0.0):
        self.model = model
        self.iters = iters
        self.atol = atol

    def _solve(self, p):
        return solvers.lsqr(self.model_, p, self.iters, self.atol)


class TikhonovReconstructor(_Reconstructor):
    """Least squares with an ``lam * ||u||^2`` penalty."""

    def __init__(self, model=None, lam=1.0, iters=50, atol=0.0):
        self.model = model
        self.lam = lam
        self.iters = iters
        self.atol = atol

    def _validate_params_(self):
        super()._validate_params_()
        check_positive("lam", self.lam, allow_zero=True)

    def _solve(self, p):
        return solvers.tikhonov(self.model_, p, self.lam, self.iters, self.atol), None


class TVL1Reconstructor(_Reconstructor):
    """TV plus Haar-L1 regularized least squares (primal-dual)."""

    def __init__(self, model=None, alpha=1.0, mu=0.0, iters=3000, haar_levels=3, extrapolation=False, trace_stride=10):
        self.model = model
        self.alpha = alpha
        self.mu = mu
        self.iters = iters
        self.haar_levels = haar_levels
        self.extrapolation = extrapolation
        self.trace_stride = trace_stride

    def _config(self):
        return solvers.SolverConfig(
            iters=self.iters,
            alpha=self.alpha,
            mu=self.mu,
            haar_levels=self.haar_levels,
            extrapolation=self.extrapolation,
            trace_stride=self.trace_stride,
        )

    def _validate_params_(self):
        super()._validate_params_()
        self._config()

    def _solve(self, p):
        return solvers.chambolle_pock_tvl1(self.model_, p, self._config(), self.image_shape_)


class A2TVReconstructor(_Reconstructor):
    """Adaptive anisotropic TV reconstruction.

    Parameters
    ----------
    lam : float
        Fidelity weight.
    k : float
        Anisotropy threshold in (0, 1]; smaller is more anisotropic.
    sigma_px, rho_px : float
        Structure tensor smoothing scales.
    tensor_update_stride : int
        Iterations between tensor rebuilds; 0 keeps the identity.
    """

    def __init__(
        self,
        model=None,
        lam=0.01,
        k=1.0,
        sigma_px=1.5,
        rho_px=3.0,
        iters=3000,
        tensor_update_stride=1,
        extrapolation=False,
        trace_stride=10,
    ):
        self.model = model
        self.lam = lam
        self.k = k
        self.sigma_px = sigma_px
        self.rho_px = rho_px
        self.iters = iters
        self.tensor_update_stride = tensor_update_stride
        self.extrapolation = extrapolation
        self.trace_stride = trace_stride

    def _config(self):
        return solvers.SolverConfig(
            iters=self.iters,
            lam=self.lam,
            k=self.k,
            sigma_px=self.sigma_px,
            rho_px=self.rho_px,
            tensor_update_stride=self.tensor_update_stride,
            extrapolation=self.extrapolation,
            trace_stride=self.trace_stride,
        )

    def _validate_params_(self):
        super()._validate_params_()
        self._config()

    def _solve(self, p):
        return solvers.chambolle_pock_a2tv(self.model_, p, self._config(), self.image_shape_)
