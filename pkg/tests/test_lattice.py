import math
from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oschom.lattice import (Centered, Constant, Explicit, FracPower, LatticeWindow, LogDecay, Periodic,
                            PowerDecay, TrigLattice, Zero, cesaro_average, correlation_constants,
                            descriptor_from_dict, emit_point_cloud, general_correlation, generate,
                            uniform_correlation_rate)

SQRT2 = math.sqrt(2)
# {9 sqrt 2} at 40 digits
FRAC_9_SQRT2 = 0.7279220613578554392


def _frac_decimal(k, theta, p):
    getcontext().prec = 80
    v = Decimal(k) ** p * Decimal(theta)  # Decimal(float) is the exact binary value
    return float(v - v.to_integral_value(rounding="ROUND_FLOOR"))


def test_zero_sequence():
    w = LatticeWindow(2, (0, 0), 6.0)
    s = generate(Zero(), w)
    assert not np.any(s.box(*w.bounds()))


def test_trig_lattice_origin():
    np.testing.assert_array_equal(TrigLattice().evaluate(np.array([[0, 0]]), 2), [[1.0, 0.0]])


def test_frac_power_k3():
    assert FracPower(SQRT2).evaluate(np.array([[3]]), 1)[0, 0] == pytest.approx(FRAC_9_SQRT2, abs=1e-14)


@given(st.integers(-10**7, 10**7), st.sampled_from([2, 3]))
def test_frac_power_matches_extended_precision(k, p):
    got = FracPower(SQRT2, p).evaluate(np.array([[k]]), 1)[0, 0]
    assert 0.0 <= got < 1.0
    assert got == pytest.approx(_frac_decimal(k, SQRT2, p), abs=1e-15)


@given(st.floats(-2, 2), st.floats(-2, 2))
def test_cesaro_constant(a, b):
    w = LatticeWindow(2, (3, -1), 5.0)
    np.testing.assert_allclose(cesaro_average(generate(Constant((a, b)), w), w), [a, b], atol=1e-15)


def test_cesaro_periodic_whole_periods():
    seq = Periodic((4,), ((0.1, 0.2, 0.3, 0.6),))
    w = LatticeWindow(1, (0,), 8.0, "box")
    assert cesaro_average(generate(seq, w), w)[0] == pytest.approx(0.3, abs=1e-15)


def test_cesaro_trig_decays_like_one_over_R():
    radii = np.array([32.0, 64.0, 128.0, 256.0])
    avg = []
    for R in radii:
        w = LatticeWindow(2, (0, 0), R)
        avg.append(np.abs(cesaro_average(generate(TrigLattice(), w), w)).max())
    avg = np.array(avg)
    assert np.all(avg * radii <= 1.0)


def test_trig_correlations():
    R = 128.0
    w = LatticeWindow(2, (0, 0), R)
    tab = correlation_constants(generate(TrigLattice(), w), w, 3.0)
    np.testing.assert_allclose(tab.at((0, 0)), np.diag([0.5, 0.5]), atol=5 / R)
    for lag, C in zip(tab.lags, tab.values):
        want = np.diag([math.cos(SQRT2 * lag[0]) / 2, math.cos(SQRT2 * lag[1]) / 2])
        assert np.abs(C - want).max() <= 5 / R


def test_power_decay_correlations_vanish():
    sup = []
    for R in (64.0, 256.0, 1024.0):
        w = LatticeWindow(1, (0,), R)
        sup.append(np.abs(correlation_constants(generate(PowerDecay(1.0), w), w, 4.0).values).max())
    assert sup[0] > sup[1] > sup[2]


def test_general_correlation_frac_power():
    w = LatticeWindow(1, (0,), 4096.0)
    s = generate(FracPower(SQRT2), w)
    assert general_correlation(s, w, lambda a, b: a[:, 0], (0,)).value == pytest.approx(0.5, abs=2e-3)
    for lag in (1, 3):
        v = general_correlation(s, w, lambda a, b: a[:, 0] * b[:, 0], (lag,)).value
        assert v == pytest.approx(0.25, abs=2e-3)


@given(st.floats(-5, 5), st.integers(0, 4))
def test_general_correlation_constant_F(c, lag):
    w = LatticeWindow(1, (0,), 64.0)
    s = generate(LogDecay(1.0), w)
    assert general_correlation(s, w, lambda a, b: np.full(len(a), c), (lag,)).value == pytest.approx(c)


def test_uniform_rate_zero_passes():
    r = uniform_correlation_rate(Zero(), 1, [1 / 64, 1 / 128, 1 / 256])
    assert r["pass"] and max(r["gamma"]) == 0.0


def test_uniform_rate_frac_power_decreasing():
    # windows below radius ~128 still fluctuate; the trend is asymptotic
    r = uniform_correlation_rate(FracPower(SQRT2), 1, [1 / 128, 1 / 256, 1 / 512, 1 / 1024])
    assert r["pass"]


def test_uniform_rate_trig_is_order_eps():
    r = uniform_correlation_rate(TrigLattice(), 2, [1 / 32, 1 / 64, 1 / 128])
    assert r["pass"] and r["fit"]["exponent"] >= 0.8


def test_point_cloud():
    w = LatticeWindow(2, (0, 0), 3.0)
    k, X = emit_point_cloud(generate(Zero(), w), w)
    np.testing.assert_array_equal(k, X)
    k, X = emit_point_cloud(generate(Constant((0.25, -0.5)), w), w)
    np.testing.assert_allclose(X - k, np.tile([0.25, -0.5], (len(k), 1)))
    k, X = emit_point_cloud(generate(TrigLattice(), w), w)
    np.testing.assert_allclose(X[np.all(k == 0, axis=1)][0], [1.0, 0.0])


@pytest.mark.parametrize("desc", [Zero(), Constant((0.5,)), PowerDecay(2.0), LogDecay(0.75),
                                  FracPower(0.3, 3), TrigLattice(), Periodic((2,), ((0.1, -0.1),)),
                                  Explicit((-1,), ((0.1, 0.2, 0.3),), fill=0.0),
                                  Centered(FracPower(SQRT2), (0.5,))])
def test_descriptor_roundtrip(desc):
    dim = 2 if isinstance(desc, TrigLattice) else 1
    k = np.arange(-3, 4).reshape(-1, 1)
    k = np.hstack([k, k[::-1]]) if dim == 2 else k
    again = descriptor_from_dict(desc.to_dict())
    np.testing.assert_array_equal(again.evaluate(k, dim), desc.evaluate(k, dim))


def test_invalid_descriptors():
    with pytest.raises(ValueError):
        LogDecay(0.5)
    with pytest.raises(ValueError):
        FracPower(SQRT2, 1)
    with pytest.raises(ValueError):
        Explicit((0,), ((0.1,),)).evaluate(np.array([[5]]), 1)
    with pytest.raises(ValueError):
        descriptor_from_dict({"kind": "nope"})
