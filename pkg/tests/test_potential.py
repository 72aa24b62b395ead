import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oschom.gridfield import GridField, uniform_grid
from oschom.lattice import Constant, Explicit, LogDecay, TrigLattice, Zero
from oschom.potential import (BumpSpec, CompatibilityError, PeriodicPart, PotentialAssembly, ResolutionError,
                              default_assembly, evaluate_V, make_compatible, sample_script_V,
                              sample_taylor_parts, sample_V, sample_V_per)
from oschom.profile import RadialProfile

# a * int eta and a^2 * int_{R^2} eta at a = 0.45 (mpmath)
INT_PHI_1D = 0.199797217275635747
INT_PHI_2D = 0.0944687596186118389


def test_bump_integral_oracle():
    assert BumpSpec(1).integral == pytest.approx(INT_PHI_1D, rel=1e-12)
    assert BumpSpec(2).integral == pytest.approx(INT_PHI_2D, rel=1e-12)
    assert abs(BumpSpec(1, kind="zero_mean").integral) < 1e-13
    assert abs(BumpSpec(2, kind="zero_mean").integral) < 1e-13


def test_make_compatible_cases():
    unit = BumpSpec(1, amplitude=1.0 / INT_PHI_1D)
    b, p = make_compatible(unit, PeriodicPart(1, (), -1.0))
    assert b == unit and p.mean == -1.0
    two = BumpSpec(1, amplitude=2.0 / INT_PHI_1D)
    b, _ = make_compatible(two, PeriodicPart(1, (), -1.0))
    assert b.amplitude == pytest.approx(two.amplitude / 2)
    zm = BumpSpec(1, kind="zero_mean")
    b, p = make_compatible(zm, PeriodicPart(1, (), 0.0))
    assert b == zm and p.mean == 0.0
    with pytest.raises(CompatibilityError):
        make_compatible(zm, PeriodicPart(1, (), -1.0))


def test_incompatible_assembly_rejected():
    with pytest.raises(CompatibilityError):
        PotentialAssembly(BumpSpec(1), PeriodicPart.product_cos(1, 1.0, 0.0))


def test_zero_sequence_gives_V_per():
    asm = default_assembly(1)
    g = uniform_grid((0.0,), (1 / 512,), (129,))
    np.testing.assert_array_equal(sample_V(asm, g, 1 / 16).values, sample_V_per(asm, g, 1 / 16).values)


def test_single_shifted_bump_against_direct_sum():
    asm = default_assembly(1, Explicit((0,), ((0.3,),), fill=0.0))
    eps = 1 / 8
    g = uniform_grid((-0.25,), (eps / 64,), (129,))
    y = g.points()[:, 0] / eps
    prof = RadialProfile(1, asm.bump.terms())
    direct = asm.periodic.value(y[:, None]) + prof.value((y - 0.3)[:, None])
    for k in range(-4, 5):
        if k != 0:
            direct = direct + prof.value((y - k)[:, None])
    np.testing.assert_allclose(sample_V(asm, g, eps).values, direct, atol=1e-14)


def test_resolution_guard():
    with pytest.raises(ResolutionError):
        sample_V(default_assembly(1), uniform_grid((0.0,), (0.1,), (11,)), 1 / 4)


def test_taylor_parts_vanish_for_zero_sequence():
    asm = default_assembly(2)
    g = uniform_grid((0.0, 0.0), (1 / 256, 1 / 256), (33, 33))
    v1, v2 = sample_taylor_parts(asm, g, 1 / 8)
    assert not np.any(v1.values) and not np.any(v2.values)


def test_first_order_single_bump():
    v = (0.2, -0.1)
    asm = default_assembly(2, Explicit((0, 0), (((0.2,),), ((-0.1,),)), fill=0.0))
    g = uniform_grid((-0.5, -0.5), (1 / 64, 1 / 64), (65, 65))
    v1, _ = sample_taylor_parts(asm, g, 1.0)
    grad = asm.bump.gradient(g.points())
    np.testing.assert_allclose(v1.values.ravel(), grad @ np.array(v), atol=1e-13)


@pytest.mark.parametrize("dim,seq", [(1, LogDecay(1.0)), (2, TrigLattice()), (1, Constant((0.4,)))])
def test_taylor_split_reconstructs_V(dim, seq):
    asm = default_assembly(dim, seq)
    rng = np.random.default_rng(7)
    y = rng.uniform(-6, 6, size=(200, dim))
    eps = 1.0
    V = evaluate_V(asm, y)
    Vp = evaluate_V(PotentialAssembly(asm.bump, asm.periodic, Zero()), y)
    fields = []
    for pt in y:
        grid = GridField(np.zeros((1,) * dim), (1e-3,) * dim, tuple(pt * eps))
        fields.append([f.values.ravel()[0] for f in sample_taylor_parts(asm, grid, eps)])
    v1, v2 = np.array(fields).T
    np.testing.assert_allclose(V - Vp, -v1 + v2, atol=1e-8)


@pytest.mark.parametrize("bump_kind,want", [("mollifier", 0.4 * INT_PHI_1D), ("zero_mean", 0.0)])
def test_script_V_weak_limit(bump_kind, want):
    asm = default_assembly(1, Constant((0.4,)), kind=bump_kind)
    eps = 1 / 32
    n = 256
    g = uniform_grid((0.0,), (eps / n,), (32 * n,))  # 32 whole cells, periodic nodes
    f = sample_script_V(asm, g, eps)
    assert f.values[0].mean() == pytest.approx(want, abs=1e-9)


def test_script_V_zero_sequence():
    asm = default_assembly(2)
    g = uniform_grid((0.0, 0.0), (1 / 256, 1 / 256), (17, 17))
    assert not np.any(sample_script_V(asm, g, 1 / 8).values)


@given(st.floats(-0.45, 0.45))
def test_V_symmetric_under_reflection_for_zero_sequence(y):
    asm = default_assembly(1)
    assert evaluate_V(asm, [[y]])[0] == pytest.approx(evaluate_V(asm, [[-y]])[0], abs=1e-14)
