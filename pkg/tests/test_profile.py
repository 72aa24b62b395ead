import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oschom import kernels
from oschom.profile import RadialProfile, eta, unit_mass

# mpmath quadrature at 30 digits
MASS_1D = 0.443993816168079437823
MASS_2D = 0.466512393178330068880
GRAD_U_2D_R03 = 0.0526225979351502608   # U'(0.3) = m(0.3) / (2 pi 0.3)
GRAD_U_1D_X02 = 0.0725829931189062810   # (1/2) int sgn(0.2 - y) eta(y) dy


def test_unit_mass_matches_quadrature():
    assert unit_mass(1) == pytest.approx(MASS_1D, rel=1e-13)
    assert unit_mass(2) == pytest.approx(MASS_2D, rel=1e-13)


def test_eta_vanishes_outside_unit_ball():
    assert np.all(eta(np.array([1.0, 1.5, -2.0])) == 0.0)
    assert eta(0.0) == pytest.approx(np.exp(-1.0))


def test_grad_U_against_radial_quadrature():
    p1 = RadialProfile(1, [(1.0, 1.0)])
    p2 = RadialProfile(2, [(1.0, 1.0)])
    assert p1.grad_U([[0.2]])[0, 0] == pytest.approx(GRAD_U_1D_X02, rel=1e-9)
    assert p2.grad_U([[0.3, 0.0]])[0, 0] == pytest.approx(GRAD_U_2D_R03, rel=1e-8)


def test_grad_U_exterior_is_point_mass_field():
    p = RadialProfile(2, [(2.0, 0.4)])
    x = np.array([[3.0, -4.0]])
    want = p.mass * x / (2 * np.pi * 25.0)
    np.testing.assert_allclose(p.grad_U(x), want, rtol=1e-12)


@given(st.floats(-0.9, 0.9), st.floats(-0.9, 0.9))
def test_gradient_matches_finite_difference(a, b):
    p = RadialProfile(2, [(1.0, 0.45), (-4.0, 0.225)])
    x = np.array([[a * 0.45, b * 0.45]])
    h = 1e-6
    fd = [(p.value(x + h * e) - p.value(x - h * e))[0] / (2 * h) for e in np.eye(2)]
    np.testing.assert_allclose(p.gradient(x)[0], fd, atol=1e-6)


@given(st.floats(0.05, 0.95))
def test_hess_U_trace_is_phi(r):
    # Delta U = phi
    p = RadialProfile(2, [(1.0, 0.45)])
    x = np.array([[r * 0.45 * 0.6, r * 0.45 * 0.8]])
    assert np.trace(p.hess_U(x)[0]) == pytest.approx(p.value(x)[0], abs=1e-7)


def test_antiderivative_limits():
    p = RadialProfile(1, [(1.0, 0.45)])
    assert p.antiderivative(np.array([-1.0]))[0] == 0.0
    assert p.antiderivative(np.array([1.0]))[0] == pytest.approx(p.mass, rel=1e-14)
    assert p.antiderivative(np.array([0.0]))[0] == pytest.approx(p.mass / 2, rel=1e-14)


@pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled backend not built")
@pytest.mark.parametrize("mode", [kernels.V1, kernels.V2, kernels.GRAD_WT, kernels.GRAD_W2_CLOSED,
                                  kernels.PHI_SHIFTED, kernels.SCRIPT])
@pytest.mark.parametrize("dim", [1, 2])
def test_backends_agree(mode, dim):
    rng = np.random.default_rng(3)
    lo = np.full(dim, -6, dtype=np.int64)
    zb = rng.uniform(-0.5, 0.5, size=(dim,) + (13,) * dim)
    y = rng.uniform(-3, 3, size=(40, dim))
    terms = [(1.0, 0.45)]
    a = kernels.local_sum(y, zb, lo, 2, mode, terms, backend="python")
    b = kernels.local_sum(y, zb, lo, 2, mode, terms, backend="cython")
    np.testing.assert_allclose(a, b, atol=1e-13)
