"""Compiled vs numpy lattice-sum kernels.

Times ``local_sum`` for each evaluation mode on the same points and sites
with both backends and reports the speedup and the max abs difference.

    python benchmarks/bench_kernels.py [--points 4000] [--repeat 3]
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from oschom import kernels
from oschom.lattice import LogDecay, TrigLattice, evaluate_box
from oschom.potential import BumpSpec

MODES = [("V1", kernels.V1), ("V2", kernels.V2), ("grad_wt", kernels.GRAD_WT),
         ("grad_w2 closed", kernels.GRAD_W2_CLOSED), ("grad_w2 quad", kernels.GRAD_W2_QUAD)]


def case(dim, n_points, seed=0):
    rng = np.random.default_rng(seed)
    bump = BumpSpec(dim=dim)
    seq = LogDecay(alpha=1.0) if dim == 1 else TrigLattice()
    span = 64 if dim == 1 else 8
    lo = np.full(dim, -span - 4, dtype=np.int64)
    hi = np.full(dim, span + 4, dtype=np.int64)
    zb = evaluate_box(seq, dim, lo, hi)
    y = rng.uniform(-span, span, size=(n_points, dim))
    return y, zb, lo, bump.terms()


def bench(dim, n_points, repeat):
    y, zb, lo, terms = case(dim, n_points)
    rad = 2
    rows = []
    for name, mode in MODES:
        out = {}
        times = {}
        for be in ("python", "cython"):
            fn = lambda: kernels.local_sum(y, zb, lo, rad, mode, terms, backend=be)  # noqa: E731
            out[be] = fn()
            times[be] = min(timeit.repeat(fn, number=1, repeat=repeat))
        diff = float(np.abs(out["python"] - out["cython"]).max())
        rows.append((dim, name, times["python"], times["cython"], times["python"] / times["cython"], diff))
    return rows


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--points", type=int, default=4000)
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)
    if kernels._compiled is None:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")
    print(f"{'d':>2} {'mode':<16} {'python [s]':>11} {'cython [s]':>11} {'speedup':>8} {'max|diff|':>10}")
    for dim in (1, 2):
        for d, name, tp, tc, sp, diff in bench(dim, args.points, args.repeat):
            print(f"{d:>2} {name:<16} {tp:>11.4f} {tc:>11.4f} {sp:>8.1f} {diff:>10.2e}")


if __name__ == "__main__":
    main()
