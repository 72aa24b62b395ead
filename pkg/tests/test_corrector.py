import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from oschom import corrector as cr
from oschom.lattice import (Centered, Constant, Explicit, FracPower, LatticeWindow, LogDecay, Periodic,
                            PowerDecay, TrigLattice, Zero, correlation_constants, generate)
from oschom.potential import BumpSpec, PeriodicPart, PotentialAssembly, default_assembly

M_SINGLE_MODE = 1 / (8 * math.pi**2)
# grad w2 of a single site Z_0 = (0.2, -0.15) at y = (1.7, 0.4): dblquad of grad G * V2 (32 s, frozen)
W2_SINGLE_SITE_2D = (-9.746101185912682e-05, 1.6640335529152396e-04)


def _trig_only(dim, s=1.0):
    return PotentialAssembly(BumpSpec(dim, amplitude=0.0), PeriodicPart.product_cos(dim, s), Zero())


def test_single_mode_periodic_corrector():
    per = cr.solve_periodic_corrector(_trig_only(1))
    y = np.linspace(0, 1, 17)
    w, g = per.evaluate_tensor([y])
    np.testing.assert_allclose(w, -np.cos(2 * np.pi * y) / (4 * np.pi**2), atol=1e-15)
    assert per.cell_energy == pytest.approx(M_SINGLE_MODE, rel=1e-13)


def test_zero_potential_corrector():
    per = cr.solve_periodic_corrector(_trig_only(1, 0.0))
    assert per.cell_energy == 0.0
    assert not np.any(per.evaluate_tensor([np.linspace(0, 1, 9)])[1])


modes_1d = st.lists(st.tuples(st.integers(1, 6), st.floats(-1, 1), st.floats(-1, 1)), min_size=1, max_size=4)


@given(modes_1d)
def test_virial_identity_and_spectral_energy(modes):
    per_part = PeriodicPart(1, tuple(((m,), a, b) for m, a, b in modes))
    asm = PotentialAssembly(BumpSpec(1, amplitude=0.0), per_part, Zero())
    per = cr.solve_periodic_corrector(asm)
    assert per.virial_defect <= 1e-6 * (1 + per.cell_energy)
    # merged duplicate frequencies: compare against the energy of the sampled field
    assert per.cell_energy == pytest.approx(cr.trig_cell_energy(per_part), rel=1e-9, abs=1e-15) or \
        len({m for m, _, _ in modes}) < len(modes)


@given(st.floats(0.2, 0.5), st.floats(0.3, 3.0))
def test_virial_identity_with_bump_2d(a, s):
    bump = BumpSpec(2, support_radius=a)
    asm = PotentialAssembly(bump, PeriodicPart.product_cos(2, s, -bump.integral), Zero())
    per = cr.solve_periodic_corrector(asm)
    assert per.virial_defect <= 1e-6 * (1 + per.cell_energy)


def test_discrete_cell_constant_converges_second_order():
    asm = _trig_only(1)
    e = [abs(cr.discrete_cell_constant(asm, n) - M_SINGLE_MODE) for n in (16, 32, 64)]
    assert 3.9 < e[0] / e[1] < 4.1 and 3.9 < e[1] / e[2] < 4.1
    assert cr.discrete_cell_mean(asm, 16) == pytest.approx(0.0, abs=1e-15)


def test_first_order_vanishes_for_zero_sequence():
    asm = default_assembly(2)
    g = cr.closed_grid(2, 1 / 32, 16, (0.0, 0.125))
    f = cr.build_first_order(asm, 1 / 32, 1.0, g)
    assert not np.any(f.gradient.values)


def test_first_order_matches_closed_form_1d():
    asm = default_assembly(1, LogDecay(1.0))
    eps = 1 / 64
    b = cr.build_bundle(asm, eps, 32)
    x = b.gradient.axis(0)
    w1, _ = cr.oracle_corrector_1d(asm, eps, x, periodic=b.periodic)
    num = b.gradient.values[0]
    err = np.abs((num - num.mean()) - (w1 - w1.mean())).max()
    assert err <= 5e-3 * np.abs(w1).max()


def test_vanishing_integral_bump():
    asm = default_assembly(1, FracPower(math.sqrt(2)), kind="zero_mean")
    sups = []
    for eps in (1 / 32, 1 / 64, 1 / 128):
        f = cr.build_first_order(asm, eps, 1.0, cr.closed_grid(1, eps, 32))
        assert abs(f.renorm_constant[0]) < 1e-12
        sups.append(np.abs(f.gradient.values).max())
    assert max(sups) < 1.5 * min(sups)


def test_second_order_vanishes_for_zero_sequence():
    asm = default_assembly(1)
    s = cr.build_second_order(asm, 1 / 16, cr.closed_grid(1, 1 / 16, 32))
    assert s.sup_norm == 0.0


def test_second_order_single_site_1d_against_quadrature():
    asm = default_assembly(1, Explicit((0,), ((0.3,),), fill=0.0))
    prof = asm.bump.profile

    def V2(s):
        return prof.value([[s - 0.3]])[0] - prof.value([[s]])[0] + 0.3 * prof.gradient([[s]])[0, 0]

    for y in (-0.2, 0.1, 0.5, 1.3):
        left = integrate.quad(V2, -1, y, epsabs=1e-14, limit=200)[0]
        right = integrate.quad(V2, y, 1, epsabs=1e-14, limit=200)[0]
        got = cr.lattice_gradient(asm, np.array([[y]]), "w2", 10.0)[0, 0]
        assert got == pytest.approx(0.5 * (left - right), abs=1e-13)


def test_second_order_single_site_2d_against_quadrature():
    asm = default_assembly(2, Explicit((0, 0), (((0.2,),), ((-0.15,),)), fill=0.0))
    got = cr.lattice_gradient(asm, np.array([[1.7, 0.4]]), "w2", 10.0)[0]
    np.testing.assert_allclose(got, W2_SINGLE_SITE_2D, rtol=1e-9)


@given(st.floats(0.02, 0.1))
def test_second_order_is_quadratic_in_Z(amp):
    # small |Z|: the Taylor remainder is dominated by its quadratic term
    y = np.linspace(-3, 3, 41)[:, None]
    a = cr.lattice_gradient(default_assembly(1, LogDecay(1.0, amp)), y, "w2", 64.0)
    b = cr.lattice_gradient(default_assembly(1, LogDecay(1.0, amp / 2)), y, "w2", 64.0)
    ratio = np.abs(a).max() / np.abs(b).max()
    assert 3.5 < ratio < 4.5


def test_second_order_closed_matches_quadrature_method():
    asm = default_assembly(2, TrigLattice())
    y = np.random.default_rng(1).uniform(-2, 2, size=(30, 2))
    a = cr.lattice_gradient(asm, y, "w2", 12.0, method="closed")
    b = cr.lattice_gradient(asm, y, "w2", 12.0, method="quad")
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_second_order_tail_budget():
    asm = default_assembly(2, TrigLattice())
    with pytest.raises(cr.TailBudgetError):
        cr.build_second_order(asm, 1 / 8, cr.closed_grid(2, 1 / 8, 16, (0.0, 0.25)), radius=8.0, tail_tol=1e-6)


def test_bundle_reduces_to_periodic_for_zero_sequence():
    asm = _trig_only(1)
    b = cr.build_bundle(asm, 1 / 16, 32)
    np.testing.assert_array_equal(b.gradient.values, b.w_per_gradient.values)
    assert b.residual < 1e-2


def test_residual_second_order_1d():
    asm = default_assembly(1, LogDecay(1.0))
    res = [cr.build_bundle(asm, 1 / 16, n).residual for n in (32, 64, 128)]
    assert all(3.5 <= a / b <= 4.5 for a, b in zip(res, res[1:]))


def test_sublinearity_decreases():
    asm = default_assembly(1, LogDecay(1.0))
    s = [cr.sublinearity(cr.build_bundle(asm, e, 32)) for e in (1 / 32, 1 / 64, 1 / 128)]
    assert s[0] > s[1] > s[2]


def test_empirical_M_single_mode():
    asm = _trig_only(1)
    model = cr.estimate_M_empirical([cr.build_bundle(asm, e, 32) for e in (1 / 16, 1 / 32, 1 / 64)])
    assert model.M == pytest.approx(M_SINGLE_MODE, abs=1e-12)


def _table(seq, R=1024.0, L=6.0):
    w = LatticeWindow(1, (0,), R)
    return correlation_constants(generate(seq, w), w, L)


def test_formula_zero_and_constant_sequences():
    asm = default_assembly(1)
    assert cr.estimate_M_formula(_table(Zero()), asm)["M_tilde"] == 0.0
    assert cr.estimate_M_formula(_table(Constant((0.3,))), asm)["M_tilde"] == pytest.approx(0.0, abs=1e-18)


def test_formula_power_decay_vanishes():
    asm = default_assembly(1, PowerDecay(1.0))
    m = [cr.estimate_M_formula(_table(asm.seq, R, 4.0), asm)["M_tilde"] for R in (256.0, 1024.0, 4096.0)]
    assert m[0] > m[1] > m[2] > 0 and m[2] < 1e-5


def test_formula_matches_energy_of_first_order():
    seq = Periodic((2,), ((0.2, -0.2),))
    asm = default_assembly(1, seq)
    Mt = cr.estimate_M_formula(_table(seq), asm)["M_tilde"]
    g = cr.closed_grid(1, 1 / 64, 64)  # nodal quadrature of the bump needs ~64 nodes per cell
    v = cr.build_first_order(asm, 1 / 64, 1.0, g).gradient.values[0] ** 2
    w = np.ones_like(v)
    w[[0, -1]] = 0.5
    assert float(v @ w / w.sum()) == pytest.approx(Mt, rel=1e-6)


def test_oneD_trivial_cases():
    zero = PotentialAssembly(BumpSpec(1, amplitude=0.0), PeriodicPart.product_cos(1, 0.0), Zero())
    assert cr.estimate_M_oneD(zero, [1 / 16, 1 / 32, 1 / 64]).M == 0.0
    asm = default_assembly(1, Centered(Constant((0.3,)), (0.3,)))
    m = cr.estimate_M_oneD(asm, [1 / 16, 1 / 32, 1 / 64])
    assert m.M == pytest.approx(m.details["E_per"], abs=1e-15)


def test_oracle_constants():
    zero = PotentialAssembly(BumpSpec(1, amplitude=0.0), PeriodicPart.product_cos(1, 0.0), Zero())
    w, C = cr.oracle_corrector_1d(zero, 1 / 16, np.linspace(0, 1, 33))
    assert C == 0.0 and not np.any(w)
    zm = default_assembly(1, LogDecay(1.0), kind="zero_mean")
    assert cr.oracle_corrector_1d(zm, 1 / 16, np.linspace(0, 1, 5))[1] == 0.0
    unit = BumpSpec(1, amplitude=1.0 / BumpSpec(1).integral)
    asm = PotentialAssembly(unit, PeriodicPart.product_cos(1, 1.0, -1.0), Constant((0.5,)))
    x = np.linspace(0, 1, 5)
    assert cr.oracle_corrector_1d(asm, 1 / 16, x, convention="negative")[1] == pytest.approx(-0.5, rel=1e-12)
    assert cr.oracle_corrector_1d(asm, 1 / 16, x)[1] == pytest.approx(0.5, rel=1e-12)


def test_pairing_zero_test_function_and_single_mode_limit():
    asm = _trig_only(1)
    bundles = [cr.build_bundle(asm, e, 32) for e in (1 / 32, 1 / 64, 1 / 128)]
    zero_test = lambda x: np.zeros(len(np.atleast_2d(x)))  # noqa: E731
    bump = cr.smooth_bump((0.5,), 0.4)
    res = cr.pairing_VW(bundles, [zero_test, bump], M_SINGLE_MODE)
    for row in res["rows"]:
        assert row["pairings"][0] == 0.0
    errs = [r["errors"][1] for r in res["rows"]]
    assert errs[-1] <= 0.05 * abs(res["rows"][-1]["targets"][1])


def test_dirichlet_eigenvalues():
    assert cr.dirichlet_eigenvalues(1, 2) == pytest.approx([math.pi**2, 4 * math.pi**2])
    assert cr.dirichlet_eigenvalues(2, 3) == pytest.approx([2 * math.pi**2, 5 * math.pi**2, 5 * math.pi**2])


@given(st.floats(-1, 1), st.floats(-2, 2))
def test_richardson_exact_for_linear_data(M, c):
    eps = [1 / 16, 1 / 32, 1 / 64]
    Mx, slope = cr.richardson(eps, [M + c * e for e in eps])
    assert Mx == pytest.approx(M, abs=1e-12) and slope == pytest.approx(c, abs=1e-10)
