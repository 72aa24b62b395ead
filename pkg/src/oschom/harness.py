"""End-to-end experiments and their reports."""
from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import corrector as cr
from . import solver as sv
from .config import build_assembly, config_hash, eps_ladder, is_periodic_case, trig_only
from .greens import bmo_seminorm, cached_bump_potentials
from .lattice import (LatticeWindow, TrigLattice, average_diagnostic, correlation_constants,
                      emit_point_cloud, generate, uniform_correlation_rate)


class StageError(RuntimeError):
    """A module error wrapped with the experiment stage that raised it."""

    def __init__(self, stage, exc):
        super().__init__(f"[{stage}] {type(exc).__name__}: {exc}")
        self.stage = stage
        self.original = exc


@dataclass
class Gate:
    name: str
    value: float
    threshold: str
    passed: bool
    note: str = ""

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag} {self.name}: {self.value!r} ({self.threshold}){' - ' + self.note if self.note else ''}"


@dataclass
class ExperimentReport:
    kind: str
    config: dict
    config_hash: str
    tables: dict = field(default_factory=dict)
    rates: dict = field(default_factory=dict)
    gates: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    fields: dict = field(default_factory=dict)
    elapsed: float = 0.0

    @property
    def passed(self) -> bool:
        return all(g.passed for g in self.gates)

    def gate(self, name, value, passed, threshold, note=""):
        g = Gate(name, _plain(value), threshold, bool(passed), note)
        self.gates.append(g)
        return g

    def to_dict(self):
        return {"kind": self.kind, "config_hash": self.config_hash, "config": self.config,
                "passed": self.passed, "gates": [g.__dict__ for g in self.gates],
                "rates": _plain(self.rates), "tables": _plain(self.tables), "notes": self.notes,
                "elapsed_s": self.elapsed}

    def summary(self):
        lines = [f"# {self.kind} ({self.config_hash})", "",
                 f"overall: {'PASS' if self.passed else 'FAIL'}", "", "## gates", ""]
        lines += [f"- {g.line()}" for g in self.gates]
        if self.rates:
            lines += ["", "## rates", ""]
            lines += [f"- {k}: {json.dumps(_plain(v))}" for k, v in self.rates.items()]
        if self.notes:
            lines += ["", "## notes", ""] + [f"- {n}" for n in self.notes]
        return "\n".join(lines) + "\n"

    def write(self, out_root) -> Path:
        run = Path(out_root) / self.config_hash
        (run / "tables").mkdir(parents=True, exist_ok=True)
        (run / "report.json").write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        (run / "summary.md").write_text(self.summary())
        for name, rows in self.tables.items():
            if not rows:
                continue
            cols = list(rows[0].keys())
            with open(run / "tables" / f"{name}.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(cols)
                for r in rows:
                    w.writerow([json.dumps(_plain(r.get(c))) if isinstance(r.get(c), (list, dict, tuple))
                                else _plain(r.get(c)) for c in cols])
        if self.fields:
            (run / "fields").mkdir(exist_ok=True)
            for name, f in self.fields.items():
                f.save(run / "fields" / f"{name}.gfld", sidecar={"name": name, "config_hash": self.config_hash})
        return run


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    return x


def convergence_fit(eps, values, r2_min=0.98) -> dict:
    """Log-log least-squares exponent p of values ~ c eps^p.

    When R^2 < ``r2_min`` and at least 4 points are given, the coarsest point
    is dropped once and the fit repeated.
    """
    e = np.asarray(eps, dtype=float)
    v = np.asarray(values, dtype=float)
    if len(e) < 3:
        raise ValueError("convergence_fit needs at least 3 points")
    if np.any(v <= 0) or np.any(e <= 0):
        raise ValueError("convergence_fit needs positive eps and metric values")

    def fit(ee, vv):
        x, y = np.log(ee), np.log(vv)
        p, c = np.polyfit(x, y, 1)
        pred = p * x + c
        ss = float(np.sum((y - y.mean()) ** 2))
        r2 = 1.0 - float(np.sum((y - pred) ** 2)) / ss if ss > 0 else 1.0
        return float(p), float(np.exp(c)), r2

    order = np.argsort(e)[::-1]
    e, v = e[order], v[order]
    p, c, r2 = fit(e, v)
    dropped = False
    if r2 < r2_min and len(e) >= 4:
        p, c, r2 = fit(e[1:], v[1:])
        dropped = True
    return {"exponent": p, "constant": c, "r2": r2, "dropped_coarsest": dropped}


def _decreasing(vals):
    return all(b < a for a, b in zip(vals, vals[1:]))


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except (cr.TailBudgetError, sv.SolverError) as exc:
        raise StageError(name, exc) from exc


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

def _bundles(cfg, asm, periodic, eps_list=None, per_eps=None):
    eps_list = eps_ladder(cfg) if eps_list is None else eps_list
    per_eps = cfg["domain"]["per_eps"] if per_eps is None else per_eps
    bexp = cfg["ladder"]["beta_exponent"]
    out = []
    for e in eps_list:
        out.append(_stage(f"corrector eps={e:g}", cr.build_bundle, asm, e, per_eps, beta=e**bexp,
                          periodic=periodic, method=cfg["corrector"]["method"]))
    return out


def exp_oracle_1d(cfg, rep: ExperimentReport):
    g = cfg["gates"]
    asm = build_assembly(cfg)
    per = cr.solve_periodic_corrector(asm)
    tol = g["virial"] * (1 + per.cell_energy)
    rep.gate("virial identity", per.virial_defect, per.virial_defect <= tol, f"<= {tol:.3e}")
    rep.rates["cell_energy"] = per.cell_energy
    if is_periodic_case(cfg):
        rep.rates["M"] = per.cell_energy
        if trig_only(cfg):
            exact = cr.trig_cell_energy(asm.periodic)
            err = abs(per.cell_energy - exact)
            rep.rates["M_exact"] = exact
            rep.gate("M periodic oracle", err, err <= g["m_exact"], f"<= {g['m_exact']:g}")
    rows = []
    worst = 0.0
    for b in _bundles(cfg, asm, per):
        x = b.gradient.axis(0)
        w1, C = cr.oracle_corrector_1d(asm, b.epsilon, x, periodic=per)
        num = b.gradient.values[0]
        a = num - num.mean()
        o = w1 - w1.mean()
        rel = float(np.abs(a - o).max() / np.abs(w1).max())
        worst = max(worst, rel)
        _, Cp = cr.oracle_corrector_1d(asm, b.epsilon, x[:1], periodic=per, convention="negative") \
            if abs(asm.bump.integral) > 1e-12 else (None, 0.0)
        rows.append({"eps": b.epsilon, "rel_error": rel, "C_sublinear": C, "C_negative": Cp,
                     "renorm_constant": float(b.first.renorm_constant[0]), "residual": b.residual})
    rep.tables["oracle"] = rows
    rep.gate("1D corrector oracle", worst, worst <= g["oracle_rel"], f"<= {g['oracle_rel']:g} * sup|w'|")


def _residual_study(cfg, asm, per, rep):
    c = cfg["corrector"]
    g = cfg["gates"]
    eps = 1.0 / c["residual_inverse_eps"]
    box = tuple(c["residual_box"])
    rows = []
    for n in c["residual_levels"]:
        b = _stage("residual", cr.build_bundle, asm, eps, n, R=math.sqrt(asm.dim), box=box,
                   beta=eps ** cfg["ladder"]["beta_exponent"], periodic=per, method=c["method"])
        rows.append({"per_eps": n, "h": eps / n, "residual": b.residual})
    ratios = [a["residual"] / b["residual"] for a, b in zip(rows, rows[1:])]
    rep.tables["residual"] = rows
    ok = all(g["residual_lo"] <= r <= g["residual_hi"] for r in ratios)
    rep.gate("corrector residual O(h^2)", ratios, ok, f"ratios in [{g['residual_lo']}, {g['residual_hi']}]")


def _weak_study(bundles, rep, g):
    rows = []
    for b in bundles:
        means = cr.sub_ball_gradient_means(b)
        e2 = np.sum(b.gradient.values ** 2, axis=0)
        sq = [float(cr._ball_mean(e2, b.gradient, c, r)) for c, r in cr.sub_balls(b.gradient.dim)]
        rows.append({"eps": b.epsilon, "grad_mean_max": float(max(np.linalg.norm(m) for m in means)),
                     "sublinearity": cr.sublinearity(b), "energy_sub_balls": sq,
                     "bmo_grad_w_tilde": bmo_seminorm(b.first.gradient, 4)})
    rep.tables["weak"] = rows
    gm = [r["grad_mean_max"] for r in rows]
    ok = _decreasing(gm) and gm[-1] <= g["weak_frac"] * gm[0]
    rep.gate("sub-ball means of grad W -> 0", gm, ok,
             f"monotone decrease to <= {g['weak_frac']:g} of initial")
    sl = [r["sublinearity"] for r in rows]
    rep.gate("sublinearity max|eps W|", sl, _decreasing(sl), "monotone decrease")
    sq = rows[-1]["energy_sub_balls"]
    spread = (max(sq) - min(sq)) / min(sq)
    rep.gate("sub-ball energies agree", spread, spread <= g["weak_frac"], f"<= {g['weak_frac']:g} pairwise")


def _pairing_study(bundles, M, rep, g):
    d = bundles[0].gradient.dim
    if d == 1:
        tests = [cr.smooth_bump((0.5,), 0.4), cr.smooth_bump((0.3,), 0.2), cr.smooth_bump((0.65,), 0.3)]
    else:
        tests = [cr.smooth_bump((0.5, 0.5), 0.4), cr.smooth_bump((0.3, 0.3), 0.2),
                 cr.smooth_bump((0.6, 0.55), 0.3)]
    res = cr.pairing_VW(bundles, tests, M)
    rows = [{"eps": r["eps"], "pairings": r["pairings"], "targets": r["targets"], "errors": r["errors"]}
            for r in res["rows"]]
    rep.tables["pairing"] = rows
    for t in range(len(tests)):
        errs = [r["errors"][t] for r in rows]
        scale = abs(rows[-1]["targets"][t])
        rel = errs[-1] / scale if scale > 0 else math.inf
        rep.gate(f"pairing V W test {t + 1}", errs, _decreasing(errs) and rel <= g["pairing_frac"],
                 f"decreasing, final <= {g['pairing_frac']:g} M int test", note=f"final relative {rel:.3e}")


def exp_corrector_ladder(cfg, rep: ExperimentReport):
    asm = build_assembly(cfg)
    per = cr.solve_periodic_corrector(asm)
    checks = cfg["corrector"]["checks"]
    g = cfg["gates"]
    if "residual" in checks:
        _residual_study(cfg, asm, per, rep)
    if "weak" in checks or "pairing" in checks:
        bundles = _bundles(cfg, asm, per)
        model = cr.estimate_M_empirical(bundles)
        rep.rates["M_empirical"] = model.M
        rep.rates["M_details"] = model.details
        rep.tables["bundles"] = [b.manifest() for b in bundles]
        if "weak" in checks:
            _weak_study(bundles, rep, g)
        if "pairing" in checks:
            _pairing_study(bundles, model.M, rep, g)
        if cfg["output"]["fields"]:
            b = bundles[-1]
            rep.fields.update({"grad_W": b.gradient, "W": b.value, "V": b.V,
                               "grad_w_tilde": b.first.gradient, "grad_w2": b.second.grad})


def _formula_parts(asm, rep, radius=4096.0, L_max=4.0):
    if asm.dim != 1:
        return
    w = LatticeWindow(1, (0,), radius)
    seq = generate(asm.seq, w)
    tab = correlation_constants(seq, w, L_max)
    try:
        parts = cr.estimate_M_formula(tab, asm)
        rep.rates["formula_parts"] = {"M_tilde": parts["M_tilde"], "mean_Z": tab.mean.tolist()}
    except cr.TailBudgetError as exc:
        rep.notes.append(f"formula estimate skipped: {exc}")


def exp_m_crossval(cfg, rep: ExperimentReport):
    g = cfg["gates"]
    asm = build_assembly(cfg)
    per = cr.solve_periodic_corrector(asm)
    eps = eps_ladder(cfg)
    bundles = _bundles(cfg, asm, per)
    emp = cr.estimate_M_empirical(bundles)
    one = cr.estimate_M_oneD(asm, eps, periodic=per)
    rows = [{"eps": e, "empirical": a, "oneD": b}
            for e, a, b in zip(emp.details["eps"], emp.details["domain_means"], one.details["values"])]
    rep.tables["m_crossval"] = rows
    rep.rates.update({"M_empirical": emp.M, "M_oneD": one.M, "spread": emp.details["spread"]})
    fe, fo = rows[-1]["empirical"], rows[-1]["oneD"]
    rel = abs(fe - fo) / abs(fo)
    rep.gate("empirical vs oneD at finest eps", rel, rel <= g["m_rel"], f"<= {g['m_rel']:g} relative")
    if not emp.details["spread_shrinking"]:
        rep.notes.append("sub-ball spread did not shrink along the ladder")
    if is_periodic_case(cfg) and trig_only(cfg):
        exact = cr.trig_cell_energy(asm.periodic)
        err = abs(emp.M - exact)
        rep.gate("M periodic oracle", err, err <= g["m_exact"], f"<= {g['m_exact']:g}")
    _formula_parts(asm, rep)


def _target_M(cfg, asm, rep, per_eps):
    """Homogenized constant for the eigen/homogenization experiments.

    Returns ``(M_of_eps, periodic)``; ``M_of_eps(eps)`` is the effective
    constant the discretized eps-problem converges to.
    """
    per = cr.solve_periodic_corrector(asm)
    if is_periodic_case(cfg):
        # the scheme at fixed h/eps converges to its own cell constant,
        # shifted by the nodal mean of V_per seen at scale 1/eps
        Mh = cr.discrete_cell_constant(asm, per_eps)
        mean = cr.discrete_cell_mean(asm, per_eps)
        rep.rates.update({"M": per.cell_energy, "M_scheme": Mh, "V_nodal_mean": mean})
        rep.notes.append("periodic sub-case: targets use the finite-difference cell constant at the same h/eps "
                         "and the nodal mean of V_per")
        return (lambda e: Mh - mean / e), per
    if asm.dim == 1:
        m = cr.estimate_M_oneD(asm, eps_ladder(cfg)[-3:] if len(eps_ladder(cfg)) >= 3 else eps_ladder(cfg),
                               periodic=per)
        M = m.M
    else:
        M = cr.estimate_M_empirical(_bundles(cfg, asm, per)).M
    rep.rates["M"] = M
    return (lambda e: M), per


def exp_spectrum(cfg, rep: ExperimentReport):
    g = cfg["gates"]
    asm = build_assembly(cfg)
    per_eps = cfg["domain"]["per_eps"]
    L = cfg["solver"]["L"]
    M_of, _ = _target_M(cfg, asm, rep, per_eps)
    rows = []
    for e in eps_ladder(cfg):
        dom = sv.DomainSpec.for_eps(asm.dim, e, per_eps)
        prob = sv.EpsProblem(asm, e, 0.0, sv.sine_mode_rhs(dom), dom)
        r = _stage(f"eigen eps={e:g}", sv.eigen_smallest, prob, L, M=M_of(e))
        rows.append({"eps": e, "eigenvalues": r.eigenvalues.tolist(), "targets": r.targets,
                     "errors": [float(x) for x in r.errors], "residuals": r.residuals.tolist()})
    rep.tables["spectrum"] = rows
    eps = [r["eps"] for r in rows]
    for l in range(min(L, 3)):
        errs = [r["errors"][l] for r in rows]
        rep.gate(f"lambda_{l + 1} error decreasing", errs, _decreasing(errs), "monotone decrease")
        if is_periodic_case(cfg):
            fit = convergence_fit(eps, errs)
            rep.rates[f"lambda_{l + 1}"] = fit
            rep.gate(f"lambda_{l + 1} rate", fit["exponent"], fit["exponent"] >= g["rate_min"],
                     f">= {g['rate_min']:g}")


def exp_homogenize(cfg, rep: ExperimentReport):
    g = cfg["gates"]
    s = cfg["solver"]
    asm = build_assembly(cfg)
    per_eps = cfg["domain"]["per_eps"]
    nu = s["nu"]
    M_of, per = _target_M(cfg, asm, rep, per_eps)
    M = rep.rates["M"]
    mu = cr.dirichlet_eigenvalues(asm.dim, 8)
    margin = mu[0] - M + nu
    if not s["fredholm"]:
        if margin <= 0:
            rep.gate("coercivity: mu_1 - M + nu > 0", margin, False, "> 0")
            return
        rep.gate("coercivity: mu_1 - M + nu > 0", margin, True, "> 0")
    else:
        near = min(abs(m - M + nu) for m in mu)
        rep.gate("Fredholm: mu_l - M + nu != 0", near, near >= s["margin"], f">= {s['margin']:g}")
        if near < s["margin"]:
            return
    rows = []
    for e in eps_ladder(cfg):
        dom = sv.DomainSpec.for_eps(asm.dim, e, per_eps)
        f = sv.sine_mode_rhs(dom)
        prob = sv.EpsProblem(asm, e, nu, f, dom)
        try:
            ue = _stage(f"solve eps={e:g}", sv.solve_eps, prob, method=s["method"], fredholm=s["fredholm"],
                        margin=s["margin"])
        except sv.ResonanceError as exc:
            rep.gate(f"operator margin at eps={e:g}", str(exc), False, f">= {s['margin']:g}")
            return
        us = sv.solve_homogenized(M_of(e), nu, f, dom, fredholm=s["fredholm"])
        b = _stage(f"corrector eps={e:g}", cr.build_bundle, asm, e, per_eps,
                   beta=e ** cfg["ladder"]["beta_exponent"], periodic=per, method=cfg["corrector"]["method"])
        R, l2, h1 = sv.remainder(ue, us, b)
        diff = ue.with_values(ue.values - us.values)
        rel = sv.h1_norms(diff)[0] / sv.h1_norms(us)[0]
        rows.append({"eps": e, "R_L2": l2, "R_H1": h1, "rel_L2_u": rel, "mode": ue.meta.get("mode"),
                     "margin": ue.meta.get("margin")})
        if cfg["output"]["fields"] and e == eps_ladder(cfg)[-1]:
            rep.fields.update({"u_eps": ue, "u_star": us, "remainder": R})
    rep.tables["homogenize"] = rows
    h1 = [r["R_H1"] for r in rows]
    ratios = [b / a for a, b in zip(h1, h1[1:])]
    if is_periodic_case(cfg):
        rep.gate("remainder H1 ratio per halving", ratios, max(ratios) <= g["h1_ratio"], f"<= {g['h1_ratio']:g}")
    else:
        rep.gate("remainder H1 decreasing", h1, _decreasing(h1), "monotone decrease")
    rep.rates["R_H1"] = convergence_fit([r["eps"] for r in rows], h1)
    if asm.dim == 1:
        rel = rows[-1]["rel_L2_u"]
        rep.gate("|u_eps - u*| / |u*| at finest eps", rel, rel <= g["l2_frac"], f"<= {g['l2_frac']:g}")


def _trig_reference(lag):
    l1, l2 = lag
    return np.diag([math.cos(math.sqrt(2) * l1) / 2, math.cos(math.sqrt(2) * l2) / 2])


def exp_assumption_audit(cfg, rep: ExperimentReport):
    g = cfg["gates"]
    a = cfg["audit"]
    asm = build_assembly(cfg)
    d = asm.dim
    rep.gate("compatibility", asm.compatibility_residual, asm.compatibility_residual <= asm.tol_compat,
             f"<= {asm.tol_compat:g}")
    ok, avg, spread = average_diagnostic(asm.seq, d, a["average_radius"])
    rep.rates["average"] = {"value": avg.tolist(), "spread": spread}
    rep.gate("Cesaro average", spread, ok, "windows agree within 2e-2")
    R = a["window_radius"]
    w = LatticeWindow(d, (0,) * d, R)
    seq = generate(asm.seq, w)
    tab = correlation_constants(seq, w, a["L_max"])
    rep.tables["correlations"] = [{"lag": list(map(int, l)), "C": np.asarray(v).tolist()}
                                  for l, v in zip(tab.lags, tab.values)]
    rep.rates["correlation_rate"] = tab.convergence_rate
    if isinstance(asm.seq, TrigLattice):
        err = max(float(np.abs(v - _trig_reference(l)).max()) for l, v in zip(tab.lags, tab.values))
        gate = g["corr_factor"] / R
        rep.gate("trig correlation constants", err, err <= gate, f"<= {g['corr_factor']:g}/R = {gate:.3e}")
    inv = a["rate_inverse_eps"]
    if len(inv) >= 3:
        ur = uniform_correlation_rate(asm.seq, d, [1.0 / v for v in inv])
        rep.rates["uniform_rate"] = ur
        rep.gate("uniform correlation rate", ur["gamma_log"], ur["pass"], "gamma |ln eps| non-increasing")
    if a["decay"] and asm.bump.amplitude != 0:
        tabs = cached_bump_potentials(asm.bump)
        rows = []
        for name, t in tabs.items():
            order = len(name) - 2
            want = -d if order == 1 else -(d + 1)
            ff = t.far_field
            rows.append({"table": name, "expected": want, **{k: ff.get(k) for k in ("exponent", "compact")}})
            if ff.get("compact"):
                rep.gate(f"decay {name}", "compact", True, f"|grad| <= C r^{want}",
                         note="field vanishes outside the support; bound holds trivially")
            else:
                e = ff["exponent"]
                rep.gate(f"decay {name}", e, abs(e - want) <= g["decay_tol"], f"{want} +- {g['decay_tol']:g}")
        rep.tables["decay"] = rows
    if d == 2:
        k, X = emit_point_cloud(seq, LatticeWindow(2, (0, 0), 16.0))
        rep.tables["point_cloud"] = [{"k1": int(a_[0]), "k2": int(a_[1]), "x1": float(b_[0]), "x2": float(b_[1])}
                                     for a_, b_ in zip(k, X)]


EXPERIMENTS = {
    "oracle_1d": exp_oracle_1d,
    "corrector_ladder": exp_corrector_ladder,
    "m_crossval": exp_m_crossval,
    "spectrum": exp_spectrum,
    "homogenize": exp_homogenize,
    "assumption_audit": exp_assumption_audit,
}


def run(cfg) -> ExperimentReport:
    """Run the experiment named by ``cfg['experiment']['kind']``."""
    kind = cfg["experiment"]["kind"]
    rep = ExperimentReport(kind, cfg, config_hash(cfg))
    t = time.perf_counter()
    EXPERIMENTS[kind](cfg, rep)
    rep.elapsed = time.perf_counter() - t
    return rep


def run_many(cfgs, workers=1):
    """Run independent experiments, in a process pool when ``workers`` > 1."""
    if workers <= 1 or len(cfgs) <= 1:
        return [run(c) for c in cfgs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(run, cfgs))
