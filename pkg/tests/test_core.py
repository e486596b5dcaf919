import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oatomo.core import (
    DetectionGeometry,
    ImageGrid2D,
    Sinogram,
    default_time_axis,
    detector_angles,
    detector_positions,
    make_geometry,
)


def test_grid_invariants():
    g = ImageGrid2D(4, 3, 0.5, np.arange(12))
    assert g.shape == (3, 4)
    assert g.values[1, 0] == 4.0
    assert np.allclose(g.x_coords(), [-0.75, -0.25, 0.25, 0.75])
    with pytest.raises(ValueError):
        ImageGrid2D(1, 4)
    with pytest.raises(ValueError):
        ImageGrid2D(4, 4, 0.0)
    with pytest.raises(ValueError):
        ImageGrid2D(4, 4, 0.1, np.zeros(15))
    with pytest.raises(ValueError):
        g.values[0, 0] = 1.0


def test_geometry_invariants():
    with pytest.raises(ValueError):
        DetectionGeometry(arc_deg=400)
    with pytest.raises(ValueError):
        DetectionGeometry(arc_deg=0)
    with pytest.raises(ValueError):
        DetectionGeometry(n_detectors=0)
    with pytest.raises(ValueError):
        DetectionGeometry(n_samples=2)
    with pytest.raises(ValueError):
        DetectionGeometry(dt_us=0)
    with pytest.raises(ValueError):
        DetectionGeometry(n_detectors=2, angles_deg=(1.0,))


def test_single_detector_at_arc_midpoint():
    geom = DetectionGeometry(radius_mm=40, arc_deg=360, n_detectors=1)
    pts = detector_positions(geom)
    assert pts.shape == (1, 2)
    assert math.isclose(np.hypot(*pts[0]), 40.0, rel_tol=1e-12)
    assert detector_angles(geom)[0] == pytest.approx(270.0)


def test_two_detectors_half_circle_are_antipodal():
    pts = detector_positions(DetectionGeometry(radius_mm=40, arc_deg=180, n_detectors=2))
    assert np.linalg.norm(pts[0] - pts[1]) == pytest.approx(80.0, rel=1e-12)


def test_default_arc_spacing():
    geom = DetectionGeometry(radius_mm=40, arc_deg=270, n_detectors=256)
    ang = detector_angles(geom)
    assert ang.size == 256
    assert np.allclose(np.diff(ang), 270 / 255, rtol=1e-12)
    assert ang[0] == pytest.approx(135.0)
    # arc symmetric about -y: midpoint at 270 degrees
    assert 0.5 * (ang[0] + ang[-1]) == pytest.approx(270.0)


@given(
    n=st.integers(1, 300),
    arc=st.floats(1.0, 360.0),
    radius=st.floats(1.0, 100.0),
)
@settings(max_examples=60, deadline=None)
def test_positions_on_circle_and_monotone(n, arc, radius):
    geom = DetectionGeometry(radius_mm=radius, arc_deg=arc, n_detectors=n)
    pts = detector_positions(geom)
    assert np.allclose(np.hypot(pts[:, 0], pts[:, 1]), radius, rtol=1e-12)
    assert np.all(np.diff(detector_angles(geom)) > 0)


def test_default_time_axis_values():
    grid = ImageGrid2D(256, 256, 0.1)
    t0, dt, n = default_time_axis(40.0, grid, 1.5)
    assert dt == pytest.approx(0.1 / 3)
    d = 25.6 * math.sqrt(2) / 2
    assert d == pytest.approx(18.102, abs=1e-3)
    assert t0 == pytest.approx((40 - d) / 1.5)
    assert t0 == pytest.approx(14.60, abs=5e-3)
    assert n == math.ceil((2 * d / 1.5) / dt) + 1
    with pytest.raises(ValueError):
        default_time_axis(10.0, grid, 1.5)


@given(nx=st.integers(2, 80), ny=st.integers(2, 80), n_det=st.integers(1, 40))
@settings(max_examples=40, deadline=None)
def test_default_time_axis_covers_all_pixels(nx, ny, n_det):
    grid = ImageGrid2D(nx, ny, 0.1)
    geom = make_geometry(grid, n_detectors=n_det)
    geom.validate_for(grid)


def test_validate_for_rejects_short_time_axis():
    grid = ImageGrid2D(32, 32, 0.1)
    geom = make_geometry(grid, n_detectors=4)
    short = DetectionGeometry(
        radius_mm=40, arc_deg=270, n_detectors=4, t0_us=geom.t0_us + 1.0,
        dt_us=geom.dt_us, n_samples=geom.n_samples,
    )
    with pytest.raises(ValueError):
        short.validate_for(grid)
    inside = DetectionGeometry(radius_mm=0.5, n_detectors=4, dt_us=0.1, n_samples=10)
    with pytest.raises(ValueError):
        inside.validate_for(grid)


def test_geometry_dict_round_trip():
    grid = ImageGrid2D(16, 16, 0.1)
    geom = make_geometry(grid, n_detectors=8)
    assert DetectionGeometry.from_dict(geom.to_dict()) == geom
    sub = DetectionGeometry(**{**geom.to_dict(), "n_detectors": 2, "angles_deg": (10.0, 20.0)})
    assert DetectionGeometry.from_dict(sub.to_dict()) == sub


def test_sinogram_layout():
    s = Sinogram(2, 3, np.arange(6))
    assert s.shape == (2, 3)
    assert s.values[1, 0] == 3.0
    with pytest.raises(ValueError):
        Sinogram(2, 3, np.arange(5))
