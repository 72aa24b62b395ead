import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oschom import harness as hs
from oschom.config import load_config

CONFIGS = Path(__file__).parent.parent / "configs"


@given(st.floats(0.1, 10.0), st.sampled_from([0.5, 1.0, 2.0]))
def test_convergence_fit_recovers_power(c, p):
    eps = [1 / 16, 1 / 32, 1 / 64, 1 / 128]
    fit = hs.convergence_fit(eps, [c * e**p for e in eps])
    assert fit["exponent"] == pytest.approx(p, abs=1e-10)
    assert fit["constant"] == pytest.approx(c, rel=1e-8)
    assert fit["r2"] == pytest.approx(1.0) and not fit["dropped_coarsest"]


def test_convergence_fit_drops_bad_coarsest():
    eps = [1 / 8, 1 / 16, 1 / 32, 1 / 64]
    vals = [1.0, 1 / 256, 1 / 1024, 1 / 4096]
    fit = hs.convergence_fit(eps, vals)
    assert fit["dropped_coarsest"] and fit["exponent"] == pytest.approx(2.0)


def test_convergence_fit_order_independent():
    eps = [1 / 64, 1 / 16, 1 / 32]
    fit = hs.convergence_fit(eps, [e**2 for e in eps])
    assert fit["exponent"] == pytest.approx(2.0)


@pytest.mark.parametrize("eps, vals", [([0.1, 0.05], [1, 2]), ([0.1, 0.05, 0.02], [1, 0, 2])])
def test_convergence_fit_rejects(eps, vals):
    with pytest.raises(ValueError):
        hs.convergence_fit(eps, vals)


def test_oracle_run_passes_and_writes(tmp_path):
    rep = hs.run(load_config(CONFIGS / "oracle_zero_mean.toml"))
    assert rep.passed and rep.kind == "oracle_1d"
    run_dir = rep.write(tmp_path)
    assert run_dir.name == rep.config_hash
    data = json.loads((run_dir / "report.json").read_text())
    assert data["passed"] and data["config_hash"] == rep.config_hash
    assert {g["name"] for g in data["gates"]} == {g.name for g in rep.gates}
    assert (run_dir / "summary.md").read_text().startswith("# oracle_1d")
    assert (run_dir / "tables" / "oracle.csv").is_file()


def test_report_deterministic(tmp_path):
    cfg = load_config(CONFIGS / "oracle_frac_power.toml")
    a, b = hs.run(cfg), hs.run(cfg)
    a.elapsed = b.elapsed = 0.0
    assert json.dumps(a.to_dict(), sort_keys=True) == json.dumps(b.to_dict(), sort_keys=True)


def test_margin_config_fails_coercivity():
    rep = hs.run(load_config(CONFIGS / "homogenize_margin.toml"))
    assert not rep.passed
    g = rep.gates[0]
    assert g.name.startswith("coercivity") and not g.passed and g.value < 0


def test_audit_log_decay():
    rep = hs.run(load_config(CONFIGS / "audit_1d.toml"))
    assert rep.passed
    rate = next(g for g in rep.gates if g.name == "uniform correlation rate").value
    assert all(b <= a for a, b in zip(rate, rate[1:]))


def test_m_crossval_periodic():
    rep = hs.run(load_config(CONFIGS / "m_periodic.toml"))
    assert rep.passed


def test_run_many_pool_matches_serial():
    cfgs = [load_config(CONFIGS / f) for f in ("oracle_zero_mean.toml", "oracle_frac_power.toml")]
    serial = hs.run_many(cfgs, workers=1)
    pooled = hs.run_many(cfgs, workers=2)
    for a, b in zip(serial, pooled):
        assert [g.value for g in a.gates] == [g.value for g in b.gates]


def test_stage_error_wraps():
    from oschom import solver as sv

    def boom():
        raise sv.SolverError("x")

    with pytest.raises(hs.StageError, match=r"\[solve\] SolverError"):
        hs._stage("solve", boom)


def test_plain_converts_numpy():
    out = hs._plain({"a": np.float64(1.5), 2: np.arange(2), "c": (np.bool_(True),)})
    assert out == {"a": 1.5, "2": [0, 1], "c": [True]}
    json.dumps(out)
