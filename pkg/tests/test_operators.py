import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oatomo.operators import (
    a2tv_value,
    adaptive_divergence,
    adaptive_gradient,
    divergence,
    gradient,
    haar_forward,
    haar_inverse,
    tv_value,
)
from oatomo.tensor import TensorField2D, identity_field

images = arrays(
    np.float64,
    st.tuples(st.integers(2, 12), st.integers(2, 12)),
    elements=st.floats(-100, 100, allow_nan=False),
)


def random_spd_field(rng, shape):
    """Symmetric field with eigenvalues in (0, 1]."""
    ang = rng.uniform(0, np.pi, shape)
    c = rng.uniform(0.01, 1.0, shape)
    vx, vy = np.cos(ang), np.sin(ang)
    return TensorField2D(1 + (c - 1) * vx * vx, (c - 1) * vx * vy, 1 + (c - 1) * vy * vy)


def test_gradient_examples():
    g = gradient(np.full((5, 6), 3.0))
    assert not g.gx.any() and not g.gy.any()
    ramp = np.tile(np.arange(6.0), (5, 1))
    g = gradient(ramp)
    assert np.all(g.gx[:, 0] == 0) and np.all(g.gx[:, 1:] == 1)
    assert not g.gy.any()


@given(images, st.floats(-10, 10))
@settings(max_examples=50, deadline=None)
def test_gradient_linear(u, a):
    g = gradient(a * u).as_array()
    assert np.allclose(g, a * gradient(u).as_array(), rtol=1e-12, atol=1e-9)


def test_divergence_adjoint(rng):
    for shape in [(2, 2), (7, 5), (64, 64)]:
        u = rng.standard_normal(shape)
        g = rng.standard_normal((2,) + shape)
        lhs = float(np.sum(gradient(u).as_array() * g))
        rhs = -float(np.sum(u * divergence(g)))
        assert abs(lhs - rhs) <= 1e-12 * np.linalg.norm(u) * np.linalg.norm(g)
    assert not divergence(np.zeros((2, 4, 4))).any()


def test_divergence_interior_field_sums_to_zero(rng):
    g = np.zeros((2, 10, 10))
    g[:, 2:8, 2:8] = rng.standard_normal((2, 6, 6))
    assert abs(divergence(g).sum()) < 1e-12


def test_tv_examples():
    assert tv_value(np.ones((4, 4))) == 0.0
    u = np.zeros((5, 5))
    u[2, 2] = 1.5
    assert tv_value(u) == pytest.approx(1.5 * (2 + math.sqrt(2)), rel=1e-14)


@given(images, st.floats(-10, 10))
@settings(max_examples=50, deadline=None)
def test_tv_homogeneous(u, a):
    assert tv_value(a * u) == pytest.approx(abs(a) * tv_value(u), rel=1e-10, abs=1e-9)


def test_gradient_norm_bound(rng):
    worst = 0.0
    for _ in range(1000):
        u = rng.standard_normal((16, 16))
        u /= np.linalg.norm(u)
        worst = max(worst, float(np.sum(gradient(u).as_array() ** 2)))
    assert worst <= 8.0
    # the checkerboard nearly attains the bound
    cb = (-1.0) ** np.add.outer(np.arange(32), np.arange(32))
    cb /= np.linalg.norm(cb)
    assert 7.5 < np.sum(gradient(cb).as_array() ** 2) <= 8.0


def test_adaptive_examples(rng):
    u = rng.standard_normal((6, 7))
    ident = identity_field(u.shape)
    assert np.array_equal(adaptive_gradient(ident, u).as_array(), gradient(u).as_array())
    assert not adaptive_gradient(random_spd_field(rng, (6, 7)), np.full((6, 7), 2.0)).as_array().any()
    shape = (5, 6)
    A = TensorField2D(np.zeros(shape), np.zeros(shape), np.ones(shape))
    ramp = np.tile(np.arange(6.0), (5, 1))
    assert not adaptive_gradient(A, ramp).as_array().any()
    assert not adaptive_divergence(A, np.zeros((2,) + shape)).any()
    z = rng.standard_normal((2,) + shape)
    assert np.array_equal(adaptive_divergence(identity_field(shape), z), -divergence(z))
    with pytest.raises(ValueError):
        adaptive_gradient(identity_field((3, 3)), u)


def test_adaptive_adjoint(rng):
    for shape in [(3, 4), (64, 64)]:
        A = random_spd_field(rng, shape)
        for _ in range(10):
            u = rng.standard_normal(shape)
            z = rng.standard_normal((2,) + shape)
            lhs = float(np.sum(adaptive_gradient(A, u).as_array() * z))
            rhs = float(np.sum(u * adaptive_divergence(A, z)))
            assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), np.linalg.norm(u) * np.linalg.norm(z))


def test_adaptive_gradient_not_larger(rng):
    A = random_spd_field(rng, (20, 20))
    for _ in range(20):
        u = rng.standard_normal((20, 20))
        assert np.linalg.norm(adaptive_gradient(A, u).as_array()) <= np.linalg.norm(gradient(u).as_array()) + 1e-12


def test_a2tv_value_examples(rng):
    u = rng.standard_normal((8, 9))
    assert a2tv_value(identity_field(u.shape), u) == pytest.approx(tv_value(u), rel=1e-15)
    assert a2tv_value(random_spd_field(rng, (4, 4)), np.ones((4, 4))) == 0.0
    ramp = np.tile(np.arange(9.0), (8, 1))
    c = 0.3
    shape = ramp.shape
    A = TensorField2D(np.full(shape, c), np.zeros(shape), np.ones(shape))
    assert a2tv_value(A, ramp) == pytest.approx(c * tv_value(ramp), rel=1e-14)


def test_haar_examples(rng):
    w = haar_forward(np.full((2, 2), 3.0), 1)
    assert w[0, 0] == pytest.approx(6.0, abs=1e-14)
    assert np.allclose(w.ravel()[1:], 0.0, atol=1e-14)
    for levels in (1, 2, 3):
        u = rng.standard_normal((16, 24))
        w = haar_forward(u, levels)
        assert np.allclose(haar_inverse(w, levels), u, rtol=0, atol=1e-12)
        assert np.linalg.norm(w) == pytest.approx(np.linalg.norm(u), rel=1e-12)


def test_haar_adjoint_and_errors(rng):
    u = rng.standard_normal((64, 64))
    v = rng.standard_normal((64, 64))
    lhs = float(np.sum(haar_forward(u) * v))
    rhs = float(np.sum(u * haar_inverse(v)))
    assert abs(lhs - rhs) <= 1e-10 * np.linalg.norm(u) * np.linalg.norm(v)
    with pytest.raises(ValueError):
        haar_forward(np.zeros((12, 12)), 3)
    with pytest.raises(ValueError):
        haar_forward(np.zeros((8, 8)), 0)
