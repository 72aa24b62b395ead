"""Command-line front end.

Exit codes: 0 all gates pass, 1 a gate failed (report still written),
2 configuration or validation error, 3 numerical-budget error.
"""
from __future__ import annotations

import argparse
import csv
import os
import sys
from pathlib import Path

from . import corrector as cr
from . import solver as sv
from .config import ConfigError, build_assembly, config_hash, load_config, tomllib
from .harness import StageError, run, run_many
from .lattice import LatticeWindow, box_indices, generate
from .potential import ResolutionError

SUBCOMMANDS = {
    "gen-sequence": None,
    "check-assumptions": "assumption_audit",
    "corrector": "corrector_ladder",
    "estimate-m": "m_crossval",
    "solve": "homogenize",
    "eigen": "spectrum",
    "converge": None,
    "oracle-1d": "oracle_1d",
    "run-all": None,
}
LADDER_KINDS = ("corrector_ladder", "m_crossval", "homogenize", "spectrum")

OK, GATE_FAIL, CONFIG_ERROR, BUDGET_ERROR = 0, 1, 2, 3


def _parser():
    p = argparse.ArgumentParser(prog="oschom", description=__doc__.splitlines()[0])
    p.add_argument("subcommand", choices=sorted(SUBCOMMANDS))
    p.add_argument("--config", action="append", default=None,
                   help="TOML config (run-all: files or directories, repeatable)")
    p.add_argument("--out", default=os.environ.get("OSCHOM_OUT", "runs"),
                   help="output root (default $OSCHOM_OUT or ./runs)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--cache", nargs="?", const="", default=None, metavar="DIR",
                   help="reuse potential tables from DIR (default <out>/cache)")
    p.add_argument("--radius", type=float, default=None, help="gen-sequence window radius")
    return p


def _declared_kind(path, overrides):
    try:
        kind = tomllib.loads(Path(path).read_text()).get("experiment", {}).get("kind")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    for ov in overrides:
        if ov.split("=", 1)[0].strip() == "experiment.kind":
            kind = ov.split("=", 1)[1].strip().strip("\"'")
    return kind


def _single_config(args):
    if not args.config or len(args.config) != 1:
        raise ConfigError(f"{args.subcommand} needs exactly one --config")
    path = args.config[0]
    if not Path(path).is_file():
        raise ConfigError(f"config file not found: {path}")
    return path


def _load(args):
    path = _single_config(args)
    kind = SUBCOMMANDS[args.subcommand]
    if args.subcommand == "converge":
        kind = _declared_kind(path, args.overrides)
        kind = kind if kind in LADDER_KINDS else "homogenize"
        cfg = load_config(path, args.overrides, kind=kind)
        if len(cfg["ladder"]["inverse_eps"]) < 3:
            raise ConfigError("converge needs a ladder of at least 3 eps values")
        return cfg
    if args.subcommand == "gen-sequence":
        kind = _declared_kind(path, args.overrides) or "assumption_audit"
    return load_config(path, args.overrides, kind=kind)


def _collect(paths):
    files = []
    for p in paths or ["configs"]:
        p = Path(p)
        if p.is_dir():
            files += sorted(p.glob("*.toml"))
        elif p.is_file():
            files.append(p)
        else:
            raise ConfigError(f"config path not found: {p}")
    if not files:
        raise ConfigError("no configs found")
    return files


def _report(rep, out):
    path = rep.write(out)
    for g in rep.gates:
        print(f"  {g.line()}")
    print(f"{'PASS' if rep.passed else 'FAIL'} {rep.kind} -> {path}")
    return OK if rep.passed else GATE_FAIL


def _gen_sequence(cfg, args):
    asm = build_assembly(cfg)
    radius = args.radius if args.radius is not None else cfg["audit"]["window_radius"]
    w = LatticeWindow(asm.dim, (0,) * asm.dim, radius)
    seq = generate(asm.seq, w)
    lo, hi = w.bounds()
    ks = box_indices(lo, hi)
    inside = w.mask(lo, hi).ravel()
    Z = seq.box(lo, hi).reshape(asm.dim, -1).T
    run_dir = Path(args.out) / config_hash(cfg) / "tables"
    run_dir.mkdir(parents=True, exist_ok=True)
    path = run_dir / "sequence.csv"
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow([f"k{i + 1}" for i in range(asm.dim)] + [f"Z{i + 1}" for i in range(asm.dim)])
        for k, z in zip(ks[inside], Z[inside]):
            wr.writerow([int(v) for v in k] + [repr(float(v)) for v in z])
    print(f"wrote {int(inside.sum())} sites -> {path}")
    return OK


def _dispatch(args):
    if args.cache is not None:
        os.environ["OSCHOM_CACHE"] = args.cache or str(Path(args.out) / "cache")
    if args.subcommand == "run-all":
        cfgs = [load_config(f, args.overrides) for f in _collect(args.config)]
        code = OK
        for rep in run_many(cfgs, args.workers):
            code = max(code, _report(rep, args.out))
        return code
    cfg = _load(args)
    if args.subcommand == "gen-sequence":
        return _gen_sequence(cfg, args)
    return _report(run(cfg), args.out)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return _dispatch(args)
    except (ConfigError, ResolutionError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return CONFIG_ERROR
    except (StageError, cr.TailBudgetError, sv.SolverError, sv.ResonanceError) as exc:
        print(f"numerical budget error: {exc}", file=sys.stderr)
        return BUDGET_ERROR


if __name__ == "__main__":
    sys.exit(main())
