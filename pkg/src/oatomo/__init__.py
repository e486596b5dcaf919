"""Model-based optoacoustic tomography with adaptive anisotropic TV."""

__version__ = "0.1.0"

from .core import DetectionGeometry, ImageGrid2D, Sinogram, make_geometry
from .estimators import (
    A2TVReconstructor,
    ForwardModel,
    LSQRReconstructor,
    TikhonovReconstructor,
    TVL1Reconstructor,
)
from .forward import SparseModelMatrix, build_model_matrix, normalize_matrix
from .metrics import mad
from .phantoms import PhantomSpec, disk_phantom, vessel_phantom
from .solvers import SolverConfig, chambolle_pock_a2tv, chambolle_pock_tvl1, lsqr, tikhonov

__all__ = [
    "A2TVReconstructor",
    "DetectionGeometry",
    "ForwardModel",
    "ImageGrid2D",
    "LSQRReconstructor",
    "PhantomSpec",
    "Sinogram",
    "SolverConfig",
    "SparseModelMatrix",
    "TVL1Reconstructor",
    "TikhonovReconstructor",
    "build_model_matrix",
    "chambolle_pock_a2tv",
    "chambolle_pock_tvl1",
    "disk_phantom",
    "lsqr",
    "mad",
    "make_geometry",
    "normalize_matrix",
    "tikhonov",
    "vessel_phantom",
]
