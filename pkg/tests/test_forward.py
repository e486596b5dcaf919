import math

import numpy as np
import pytest
import scipy.sparse as sp

from oatomo.core import DetectionGeometry, ImageGrid2D, detector_angles, detector_positions, make_geometry
from oatomo.forward import (
    SparseModelMatrix,
    apply,
    apply_adjoint,
    build_model_matrix,
    load_matrix,
    normalize_matrix,
    save_matrix,
    time_derivative_stencil,
)


def test_csr_invariants(small_problem):
    grid, geom, M = small_problem
    assert M.shape == (geom.n_detectors * geom.n_samples, grid.size)
    assert M.norm_factor == 1.0
    for r in range(M.n_rows):
        cols = M.indices[M.indptr[r]:M.indptr[r + 1]]
        assert np.all(np.diff(cols) > 0)
    assert M.indices.min() >= 0 and M.indices.max() < grid.size


def test_zero_image_and_linearity(small_problem, rng):
    _, _, M = small_problem
    assert not np.any(apply(M, np.zeros(M.n_cols)))
    u1, u2 = rng.standard_normal((2, M.n_cols))
    assert np.array_equal(apply(M, u1 + u2), M.csr @ (u1 + u2))
    assert np.allclose(apply(M, u1 + u2), apply(M, u1) + apply(M, u2), rtol=1e-12, atol=1e-12 * np.abs(apply(M, u1)).max())


def test_dimension_mismatch(small_problem):
    _, _, M = small_problem
    with pytest.raises(ValueError):
        apply(M, np.zeros(M.n_cols + 1))
    with pytest.raises(ValueError):
        apply_adjoint(M, np.zeros(M.n_rows - 1))


def test_adjoint_100_pairs(small_problem, rng):
    _, _, M = small_problem
    for _ in range(100):
        u = rng.standard_normal(M.n_cols)
        p = rng.standard_normal(M.n_rows)
        Mu = apply(M, u)
        lhs, rhs = Mu @ p, u @ apply_adjoint(M, p)
        assert abs(lhs - rhs) <= 1e-10 * np.linalg.norm(Mu) * np.linalg.norm(p)


def test_row_layout_detector_major(small_problem):
    grid, geom, M = small_problem
    # the block for detector d equals a build restricted to that detector
    d = 5
    sub = DetectionGeometry(**{**geom.to_dict(), "n_detectors": 1,
                               "angles_deg": (float(detector_angles(geom)[d]),)})
    Md = build_model_matrix(grid, sub)
    block = M.csr[d * geom.n_samples:(d + 1) * geom.n_samples]
    assert abs(block - Md.csr).max() <= 1e-12 * abs(Md.csr).max()


def test_rows_touch_at_most_two_arcs(small_problem):
    grid, geom, M = small_problem
    # every nonzero of row k sits within a pixel of the radii c*t_{k-1}..c*t_{k+1}
    xx, yy = np.meshgrid(grid.x_coords(), grid.y_coords())
    c, h = geom.sound_speed_mm_per_us, grid.pixel_mm
    t = geom.times_us
    for d, (px, py) in enumerate(detector_positions(geom)):
        dist = np.hypot(xx - px, yy - py).ravel()
        for k in range(geom.n_samples):
            row = d * geom.n_samples + k
            cols = M.indices[M.indptr[row]:M.indptr[row + 1]]
            if cols.size == 0:
                continue
            lo = c * t[max(k - 1, 0)] - math.sqrt(2) * h
            hi = c * t[min(k + 1, geom.n_samples - 1)] + math.sqrt(2) * h
            assert dist[cols].min() >= lo - 1e-9 and dist[cols].max() <= hi + 1e-9


def test_time_derivative_stencil():
    D = time_derivative_stencil(5, 0.5).toarray()
    t = np.arange(5) * 0.5
    assert np.allclose(D @ (3 * t + 1), 3.0)
    assert np.allclose(D[2], [0, -1, 0, 1, 0])
    with pytest.raises(ValueError):
        time_derivative_stencil(2, 1.0)


def test_build_rejects_bad_arguments():
    grid = ImageGrid2D(8, 8, 0.1)
    geom = make_geometry(grid, n_detectors=2)
    with pytest.raises(ValueError):
        build_model_matrix(grid, geom, arc_step_frac=0.0)
    with pytest.raises(ValueError):
        build_model_matrix(grid, geom, arc_step_frac=0.6)
    # time axis far past the image: no arc of a detector intersects the grid
    late = DetectionGeometry(**{**geom.to_dict(), "t0_us": 100.0})
    with pytest.raises(ValueError, match="no time sample"):
        build_model_matrix(grid, late, validate=False)


def test_grueneisen_scales_linearly():
    grid = ImageGrid2D(8, 8, 0.1)
    geom = make_geometry(grid, n_detectors=3)
    M1 = build_model_matrix(grid, geom)
    M2 = build_model_matrix(grid, DetectionGeometry(**{**geom.to_dict(), "grueneisen": 2.5}))
    assert np.allclose(M2.toarray(), 2.5 * M1.toarray(), rtol=1e-13, atol=0)


def test_build_is_deterministic(small_problem):
    grid, geom, M = small_problem
    M2 = build_model_matrix(grid, geom)
    assert np.array_equal(M.data, M2.data)
    assert np.array_equal(M.indices, M2.indices)


def test_normalize_examples():
    for n in (1, 3, 10):
        eye = SparseModelMatrix(sp.identity(n, format="csr"))
        N = normalize_matrix(eye)
        assert np.allclose(N.toarray(), 160 * np.eye(n), rtol=0, atol=1e-12)
        assert N.norm_factor == pytest.approx(1 / 160, rel=1e-15)
        u = np.arange(n, dtype=float)
        assert np.allclose(apply(N, u), 160 * u)
        N2 = normalize_matrix(SparseModelMatrix(2 * sp.identity(n, format="csr")))
        assert N2.norm_factor == pytest.approx(2 / 160, rel=1e-15)
        assert np.allclose(N2.toarray(), 160 * np.eye(n), atol=1e-12)


def test_normalize_idempotent_and_zero(small_problem):
    _, _, M = small_problem
    N = normalize_matrix(M)
    assert N.lipschitz_estimate() == pytest.approx(160, rel=1e-9)
    N2 = normalize_matrix(N)
    assert abs(N2.csr - N.csr).max() <= 1e-12 * abs(N.csr).max()
    assert N2.norm_factor == pytest.approx(N.norm_factor, rel=1e-12)
    with pytest.raises(ValueError):
        normalize_matrix(SparseModelMatrix(sp.csr_matrix((3, 3))))


def test_matrix_file_round_trip(tmp_path, small_problem):
    _, _, M = small_problem
    N = normalize_matrix(M)
    path = tmp_path / "m.oamm"
    save_matrix(N, path)
    raw = path.read_bytes()
    assert raw.startswith(b"OAMM1\n")
    assert len(raw) == 6 + 24 + 8 * (N.n_rows + 1) + 12 * N.nnz + 8
    L = load_matrix(path)
    assert L.norm_factor == N.norm_factor
    assert np.array_equal(L.data, N.data) and np.array_equal(L.indices, N.indices)
    path.write_bytes(raw[:-3])
    with pytest.raises(ValueError, match="bytes"):
        load_matrix(path)
    path.write_bytes(b"junk")
    with pytest.raises(ValueError):
        load_matrix(path)
