"""Synthetic test images and sinogram degradation."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .core import DetectionGeometry, ImageGrid2D, Sinogram, detector_angles

__all__ = [
    "PhantomSpec",
    "vessel_phantom",
    "disk_phantom",
    "step_phantom",
    "make_phantom",
    "add_gaussian_noise",
    "subsample_projections",
]

MIN_FILL, MAX_FILL = 0.01, 0.40


@dataclass(frozen=True)
class PhantomSpec:
    """Parameters of a synthetic image.

    ``width_range`` is in pixels. ``curvature`` scales the lateral jitter of
    the vessel control points relative to the image size.
    """

    kind: str = "vessels"
    size: int = 64
    seed: int = 0
    n_vessels: int = 6
    width_range: tuple[float, float] = (1.0, 3.0)
    curvature: float = 0.15
    radius_frac: float = 0.25
    height: float = 1.0
    step_position: float = 0.5
    pixel_mm: float = 0.1

    def __post_init__(self):
        if self.kind not in ("vessels", "disk", "step"):
            raise ValueError(f"unknown phantom kind {self.kind!r}")
        if self.size < 16:
            raise ValueError(f"phantom size must be >= 16, got {self.size}")
        lo, hi = self.width_range
        if lo < 1 or hi < lo:
            raise ValueError(f"invalid width range {self.width_range}")
        if not 0 < self.radius_frac <= 0.45:
            raise ValueError(f"radius_frac must lie in (0, 0.45], got {self.radius_frac}")
        if self.n_vessels < 0:
            raise ValueError("n_vessels must be >= 0")
        object.__setattr__(self, "width_range", (float(lo), float(hi)))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["width_range"] = list(self.width_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        d = dict(d)
        if "width_range" in d:
            d["width_range"] = tuple(d["width_range"])
        return cls(**d)


@dataclass
class _Canvas:
    n: int
    img: np.ndarray = field(init=False)

    def __post_init__(self):
        self.img = np.zeros((self.n, self.n))

    def draw(self, pts: np.ndarray, widths: np.ndarray, values: np.ndarray) -> np.ndarray:
        """Paint a tube along ``pts`` (pixel coordinates) onto a copy of the image."""
        out = self.img.copy()
        n = self.n
        for (x, y), w, v in zip(pts, widths, values):
            rad = max(0.5 * w, 0.71)
            i0, i1 = max(int(np.floor(x - rad)), 0), min(int(np.ceil(x + rad)), n - 1)
            j0, j1 = max(int(np.floor(y - rad)), 0), min(int(np.ceil(y + rad)), n - 1)
            if i0 > i1 or j0 > j1:
                continue
            jj, ii = np.mgrid[j0 : j1 + 1, i0 : i1 + 1]
            hit = (ii - x) ** 2 + (jj - y) ** 2 <= rad * rad
            patch = out[j0 : j1 + 1, i0 : i1 + 1]
            patch[hit] = np.maximum(patch[hit], v)
        return out


def _spline_curve(ctrl: np.ndarray, step: float = 0.25) -> np.ndarray:
    seg = np.hypot(*np.diff(ctrl, axis=0).T)
    t = np.concatenate([[0.0], np.cumsum(seg)])
    spline = CubicSpline(t, ctrl, axis=0)
    dense = np.linspace(0.0, t[-1], max(int(t[-1] / step), 2) * 4)
    pts = spline(dense)
    arclen = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(pts, axis=0).T))])
    s = np.arange(0.0, arclen[-1], step)
    return np.column_stack([np.interp(s, arclen, pts[:, 0]), np.interp(s, arclen, pts[:, 1])])


def _rot(a: float) -> np.ndarray:
    return np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])


def vessel_phantom(spec: PhantomSpec) -> ImageGrid2D:
    """Vessel-like image: smooth tubes of varying width and intensity in [0.5, 1].

    The first vessel is a hairpin, the second a trunk with a side branch, the
    rest are random splines. A vessel that would push the filled fraction
    above 40 % is skipped, and extra vessels are added while it is below 1 %.
    Identical specs give bit-identical images.
    """
    n = spec.size
    canvas = _Canvas(n)
    if spec.n_vessels == 0:
        return ImageGrid2D(n, n, spec.pixel_mm, canvas.img)
    rng = np.random.default_rng(spec.seed)
    center = (n - 1) / 2.0
    reach = 0.40 * n
    wlo, whi = spec.width_range
    jitter = spec.curvature * n

    def keep_inside(pts):
        r = np.hypot(pts[:, 0] - center, pts[:, 1] - center)
        return pts[r <= 0.46 * n]

    def profile(m):
        w = np.linspace(rng.uniform(wlo, whi), rng.uniform(wlo, whi), m)
        v = np.linspace(rng.uniform(0.5, 1.0), rng.uniform(0.5, 1.0), m)
        return w, v

    def hairpin():
        length = rng.uniform(0.35, 0.55) * n
        gap = max(rng.uniform(2.5, 4.0) * whi, 0.12 * n)
        base = np.array(
            [[-length / 2, 0.0], [0.0, 0.0], [length / 2, 0.0], [length / 2 + gap / 2, gap / 2],
             [length / 2, gap], [0.0, gap], [-length / 2, gap]]
        )
        base[:, 1] -= gap / 2
        base += rng.normal(0.0, 0.05 * jitter, base.shape)
        offset = rng.uniform(-0.1, 0.1, 2) * n
        return [(base @ _rot(rng.uniform(0, 2 * np.pi)).T) + center + offset]

    def random_ctrl(k=4):
        a = rng.uniform(0, 2 * np.pi)
        ends = np.array([np.cos(a), np.sin(a)]) * reach
        tt = np.linspace(-1.0, 1.0, k)[:, None]
        normal = np.array([-np.sin(a), np.cos(a)])
        ctrl = tt * ends + rng.normal(0.0, jitter, (k, 1)) * normal
        return ctrl + center + rng.uniform(-0.1, 0.1, 2) * n

    def trunk_with_branch():
        trunk = random_ctrl(5)
        curve = _spline_curve(trunk)
        root = curve[len(curve) // 2]
        tangent = curve[len(curve) // 2 + 1] - root
        a = np.arctan2(tangent[1], tangent[0]) + rng.choice([-1, 1]) * rng.uniform(0.5, 1.1)
        length = rng.uniform(0.25, 0.35) * n
        dirv = np.array([np.cos(a), np.sin(a)])
        normal = np.array([-dirv[1], dirv[0]])
        tt = np.linspace(0.0, 1.0, 4)[:, None]
        branch = root + tt * dirv * length + rng.normal(0.0, 0.3 * jitter, (4, 1)) * normal
        branch[0] = root
        return [trunk, branch]

    makers = [hairpin, trunk_with_branch]
    count = 0
    extra = 0
    while True:
        if count < spec.n_vessels:
            maker = makers[count] if count < len(makers) else (lambda: [random_ctrl()])
        elif np.count_nonzero(canvas.img) < MIN_FILL * n * n and extra < 50:
            maker = lambda: [random_ctrl()]  # noqa: E731
            extra += 1
        else:
            break
        count += 1
        trial = canvas.img
        for ctrl in maker():
            pts = keep_inside(_spline_curve(ctrl))
            if len(pts) < 2:
                continue
            w, v = profile(len(pts))
            canvas.img, prev = canvas.draw(pts, w, v), canvas.img
            del prev
        if np.count_nonzero(canvas.img) > MAX_FILL * n * n:
            canvas.img = trial
    return ImageGrid2D(n, n, spec.pixel_mm, canvas.img)


def disk_phantom(n: int, radius_frac: float = 0.25, height: float = 1.0, pixel_mm: float = 0.1) -> ImageGrid2D:
    """Centered disk of radius ``radius_frac * n`` pixels (pixel-center rule)."""
    if not 0 < radius_frac <= 0.45:
        raise ValueError(f"radius_frac must lie in (0, 0.45], got {radius_frac}")
    c = (n - 1) / 2.0
    jj, ii = np.mgrid[0:n, 0:n]
    r = radius_frac * n
    img = np.where((ii - c) ** 2 + (jj - c) ** 2 <= r * r, float(height), 0.0)
    return ImageGrid2D(n, n, pixel_mm, img)


def step_phantom(n: int, position: float = 0.5, height: float = 1.0, pixel_mm: float = 0.1) -> ImageGrid2D:
    """Vertical edge: columns at or beyond ``position * n`` are set to ``height``."""
    img = np.zeros((n, n))
    img[:, int(round(position * n)) :] = height
    return ImageGrid2D(n, n, pixel_mm, img)


def make_phantom(spec: PhantomSpec) -> ImageGrid2D:
    if spec.kind == "vessels":
        return vessel_phantom(spec)
    if spec.kind == "disk":
        return disk_phantom(spec.size, spec.radius_frac, spec.height, spec.pixel_mm)
    return step_phantom(spec.size, spec.step_position, spec.height, spec.pixel_mm)


def add_gaussian_noise(p: Sinogram, rel_std: float, seed: int) -> Sinogram:
    """Add i.i.d. Gaussian noise with std ``rel_std * max(p)``."""
    if rel_std < 0:
        raise ValueError("rel_std must be non-negative")
    if rel_std == 0:
        return Sinogram(p.n_detectors, p.n_samples, p.values.copy())
    peak = float(p.values.max())
    if peak <= 0:
        raise ValueError("sinogram maximum is not positive; relative noise level undefined")
    rng = np.random.default_rng(seed)
    noisy = p.values + rng.normal(0.0, rel_std * peak, p.values.shape)
    return Sinogram(p.n_detectors, p.n_samples, noisy)


def subsample_projections(p: Sinogram, geom: DetectionGeometry, n_keep: int):
    """Keep every ``n_detectors / n_keep``-th detector, starting with detector 0."""
    n = geom.n_detectors
    if p.n_detectors != n or p.n_samples != geom.n_samples:
        raise ValueError("sinogram does not match the geometry")
    if not 1 <= n_keep <= n or n % n_keep:
        raise ValueError(f"cannot keep {n_keep} of {n} detectors with an even stride")
    stride = n // n_keep
    idx = np.arange(0, n, stride)
    angles = tuple(float(a) for a in detector_angles(geom)[idx])
    reduced = DetectionGeometry(
        radius_mm=geom.radius_mm,
        arc_deg=geom.arc_deg,
        n_detectors=n_keep,
        sound_speed_mm_per_us=geom.sound_speed_mm_per_us,
        grueneisen=geom.grueneisen,
        t0_us=geom.t0_us,
        dt_us=geom.dt_us,
        n_samples=geom.n_samples,
        angles_deg=() if stride == 1 else angles,
    )
    return Sinogram(n_keep, p.n_samples, p.values[idx]), reduced
