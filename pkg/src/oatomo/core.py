"""Grid, detection geometry and sinogram containers.

Conventions used throughout the package:

* Images are stored row-major as arrays of shape ``(ny, nx)``. Column ``i``
  runs along x, row ``j`` along y, and pixel ``(i, j)`` has its center at
  ``((i - (nx-1)/2) * pixel_mm, (j - (ny-1)/2) * pixel_mm)``.
* Sinograms are stored detector-major, shape ``(n_detectors, n_samples)``,
  so the flat vector holds the full time signal of detector 0, then
  detector 1, and so on.
* Lengths are in millimetres, times in microseconds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "ImageGrid2D",
    "DetectionGeometry",
    "Sinogram",
    "detector_angles",
    "detector_positions",
    "default_time_axis",
    "make_geometry",
]

DEFAULT_SOUND_SPEED = 1.5  # mm/us, water


def _frozen_array(values, shape) -> np.ndarray:
    arr = np.array(values, dtype=np.float64).reshape(shape)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ImageGrid2D:
    """Rectangular scalar field centered on the detection geometry origin."""

    nx: int
    ny: int
    pixel_mm: float = 0.1
    values: np.ndarray | None = None

    def __post_init__(self):
        if int(self.nx) < 2 or int(self.ny) < 2:
            raise ValueError(f"grid needs nx, ny >= 2, got {self.nx}x{self.ny}")
        if not self.pixel_mm > 0:
            raise ValueError(f"pixel_mm must be positive, got {self.pixel_mm}")
        object.__setattr__(self, "nx", int(self.nx))
        object.__setattr__(self, "ny", int(self.ny))
        object.__setattr__(self, "pixel_mm", float(self.pixel_mm))
        vals = self.values
        if vals is None:
            vals = np.zeros(self.nx * self.ny)
        vals = np.asarray(vals, dtype=np.float64)
        if vals.size != self.nx * self.ny:
            raise ValueError(
                f"values length {vals.size} does not match {self.nx}x{self.ny} grid"
            )
        object.__setattr__(self, "values", _frozen_array(vals, (self.ny, self.nx)))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def size(self) -> int:
        return self.nx * self.ny

    @property
    def half_diagonal_mm(self) -> float:
        return 0.5 * math.hypot(self.nx * self.pixel_mm, self.ny * self.pixel_mm)

    def x_coords(self) -> np.ndarray:
        return (np.arange(self.nx) - (self.nx - 1) / 2.0) * self.pixel_mm

    def y_coords(self) -> np.ndarray:
        return (np.arange(self.ny) - (self.ny - 1) / 2.0) * self.pixel_mm

    def with_values(self, values) -> "ImageGrid2D":
        return replace(self, values=values)

    def same_layout(self, other: "ImageGrid2D") -> bool:
        return (self.nx, self.ny) == (other.nx, other.ny) and math.isclose(
            self.pixel_mm, other.pixel_mm
        )


@dataclass(frozen=True)
class DetectionGeometry:
    """Point detectors on a circular arc around the image.

    ``angles_deg`` is normally left empty and derived from ``arc_deg`` and
    ``n_detectors``. It is set explicitly for geometries obtained by picking a
    subset of another geometry's detectors.
    """

    radius_mm: float = 40.0
    arc_deg: float = 270.0
    n_detectors: int = 256
    sound_speed_mm_per_us: float = DEFAULT_SOUND_SPEED
    grueneisen: float = 1.0
    t0_us: float = 0.0
    dt_us: float = 1.0
    n_samples: int = 3
    angles_deg: tuple[float, ...] = field(default=())

    def __post_init__(self):
        if not self.radius_mm > 0:
            raise ValueError(f"radius_mm must be positive, got {self.radius_mm}")
        if not 0 < self.arc_deg <= 360:
            raise ValueError(f"arc_deg must lie in (0, 360], got {self.arc_deg}")
        if int(self.n_detectors) < 1:
            raise ValueError(f"n_detectors must be >= 1, got {self.n_detectors}")
        if not self.sound_speed_mm_per_us > 0:
            raise ValueError("sound speed must be positive")
        if not self.dt_us > 0:
            raise ValueError(f"dt_us must be positive, got {self.dt_us}")
        if int(self.n_samples) < 3:
            raise ValueError(f"n_samples must be >= 3, got {self.n_samples}")
        object.__setattr__(self, "n_detectors", int(self.n_detectors))
        object.__setattr__(self, "n_samples", int(self.n_samples))
        angles = tuple(float(a) for a in self.angles_deg)
        if angles and len(angles) != self.n_detectors:
            raise ValueError(
                f"{len(angles)} explicit angles given for {self.n_detectors} detectors"
            )
        object.__setattr__(self, "angles_deg", angles)

    @property
    def times_us(self) -> np.ndarray:
        return self.t0_us + self.dt_us * np.arange(self.n_samples)

    @property
    def n_rows(self) -> int:
        return self.n_detectors * self.n_samples

    def validate_for(self, grid: ImageGrid2D) -> None:
        """Check that detectors sit outside the image and time covers every pixel."""
        half_diag = grid.half_diagonal_mm
        if not self.radius_mm > half_diag:
            raise ValueError(
                f"detector radius {self.radius_mm} mm must exceed the grid "
                f"half-diagonal {half_diag:.4f} mm"
            )
        pts = detector_positions(self)
        xx, yy = np.meshgrid(grid.x_coords(), grid.y_coords())
        c = self.sound_speed_mm_per_us
        t_last = self.t0_us + (self.n_samples - 1) * self.dt_us
        lo, hi = self.t0_us * c, t_last * c
        tol = 1e-9 * self.radius_mm
        for px, py in pts:
            d = np.hypot(xx - px, yy - py)
            if d.min() < lo - tol or d.max() > hi + tol:
                raise ValueError(
                    "time axis does not cover every pixel: distances "
                    f"[{d.min():.4f}, {d.max():.4f}] mm vs window [{lo:.4f}, {hi:.4f}] mm"
                )

    def to_dict(self) -> dict:
        out = {
            "radius_mm": self.radius_mm,
            "arc_deg": self.arc_deg,
            "n_detectors": self.n_detectors,
            "sound_speed_mm_per_us": self.sound_speed_mm_per_us,
            "grueneisen": self.grueneisen,
            "t0_us": self.t0_us,
            "dt_us": self.dt_us,
            "n_samples": self.n_samples,
        }
        if self.angles_deg:
            out["angles_deg"] = list(self.angles_deg)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "DetectionGeometry":
        d = dict(d)
        d["angles_deg"] = tuple(d.get("angles_deg", ()))
        return cls(**d)


@dataclass(frozen=True, eq=False)
class Sinogram:
    n_detectors: int
    n_samples: int
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.size != int(self.n_detectors) * int(self.n_samples):
            raise ValueError(
                f"values length {vals.size} does not match "
                f"{self.n_detectors}x{self.n_samples} sinogram"
            )
        object.__setattr__(self, "n_detectors", int(self.n_detectors))
        object.__setattr__(self, "n_samples", int(self.n_samples))
        object.__setattr__(
            self, "values", _frozen_array(vals, (self.n_detectors, self.n_samples))
        )

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_detectors, self.n_samples)

    @classmethod
    def zeros_for(cls, geom: DetectionGeometry) -> "Sinogram":
        return cls(geom.n_detectors, geom.n_samples, np.zeros(geom.n_rows))


def detector_angles(geom: DetectionGeometry) -> np.ndarray:
    """Detector angles in degrees, measured counter-clockwise from +x.

    The arc starts at ``90 + (360 - arc_deg) / 2`` degrees, so its midpoint
    lies on -y and the gap (if any) is centered on +y. Spacing is
    endpoint-inclusive, except for a full 360 degree circle where the two
    endpoints would coincide and ``360/n`` spacing is used instead.
    """
    if geom.angles_deg:
        return np.array(geom.angles_deg, dtype=np.float64)
    n = geom.n_detectors
    start = 90.0 + (360.0 - geom.arc_deg) / 2.0
    if n == 1:
        return np.array([start + geom.arc_deg / 2.0])
    if geom.arc_deg >= 360.0:
        step = 360.0 / n
    else:
        step = geom.arc_deg / (n - 1)
    return start + step * np.arange(n)


def detector_positions(geom: DetectionGeometry) -> np.ndarray:
    """Detector coordinates in mm, shape ``(n_detectors, 2)``."""
    theta = np.deg2rad(detector_angles(geom))
    return geom.radius_mm * np.column_stack([np.cos(theta), np.sin(theta)])


def default_time_axis(
    radius_mm: float, grid: ImageGrid2D, sound_speed_mm_per_us: float = DEFAULT_SOUND_SPEED
) -> tuple[float, float, int]:
    """Time sampling ``(t0_us, dt_us, n_samples)`` covering the whole grid.

    Sampling is half a pixel of travel per step.
    """
    half_diag = grid.half_diagonal_mm
    if half_diag >= radius_mm:
        raise ValueError(
            f"detector radius {radius_mm} mm lies inside the image support "
            f"(half-diagonal {half_diag:.4f} mm)"
        )
    c = float(sound_speed_mm_per_us)
    t0 = (radius_mm - half_diag) / c
    t_end = (radius_mm + half_diag) / c
    dt = grid.pixel_mm / (2.0 * c)
    n_samples = int(math.ceil((t_end - t0) / dt)) + 1
    return t0, dt, n_samples


def make_geometry(
    grid: ImageGrid2D,
    radius_mm: float = 40.0,
    arc_deg: float = 270.0,
    n_detectors: int = 256,
    sound_speed_mm_per_us: float = DEFAULT_SOUND_SPEED,
    grueneisen: float = 1.0,
) -> DetectionGeometry:
    """Geometry with the default time axis for ``grid``."""
    t0, dt, n = default_time_axis(radius_mm, grid, sound_speed_mm_per_us)
    return DetectionGeometry(
        radius_mm=radius_mm,
        arc_deg=arc_deg,
        n_detectors=n_detectors,
        sound_speed_mm_per_us=sound_speed_mm_per_us,
        grueneisen=grueneisen,
        t0_us=t0,
        dt_us=dt,
        n_samples=n,
    )
