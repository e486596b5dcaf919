import numpy as np
import pytest
import scipy.sparse as sp

from oatomo.core import ImageGrid2D, make_geometry
from oatomo.forward import SparseModelMatrix, build_model_matrix, normalize_matrix


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_problem():
    """16x16 grid at 0.1 mm with 12 detectors over 270 degrees."""
    grid = ImageGrid2D(16, 16, 0.1)
    geom = make_geometry(grid, n_detectors=12)
    M = build_model_matrix(grid, geom)
    return grid, geom, M


@pytest.fixture(scope="session")
def model_64():
    """64x64 grid with 16 detectors (adjoint and normalization checks)."""
    grid = ImageGrid2D(64, 64, 0.1)
    geom = make_geometry(grid, n_detectors=16)
    return grid, geom, build_model_matrix(grid, geom)


def identity_model(n: int) -> SparseModelMatrix:
    """``160 * I`` on an ``n``-pixel image."""
    return normalize_matrix(SparseModelMatrix(sp.identity(n, format="csr")))


ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    # a criterion test that errors before its verdict still gets a line
    if report.when == "call" and report.failed and item.name.startswith("test_criterion_"):
        n = int(item.name.split("_")[2])
        item.config.stash[ACCEPTANCE].setdefault(n, f"criterion {n:2d}: FAIL  raised before a verdict")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
