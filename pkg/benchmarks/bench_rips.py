"""Time the compiled boundary reduction against the pure-Python fallback.

Usage: python benchmarks/bench_rips.py [--points 40 60 80] [--repeat 3]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from toporfm.tda import _reduce_py
from toporfm.tda.rips import enclosing_radius, pairwise_distances, rips_filtration

try:
    from toporfm.tda import _reduce as _reduce_c
except ImportError:
    _reduce_c = None


def _best_of(fn, args, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, nargs="+", default=[30, 50, 70])
    ap.add_argument("--dim", type=int, default=4)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(args.seed)

    print(f"{'points':>6} {'simplices':>10} {'python_s':>10} {'compiled_s':>10} {'speedup':>8}")
    for n in args.points:
        dist = pairwise_distances(rng.normal(size=(n, args.dim)))
        _, _, dims, indptr, indices = rips_filtration(dist, enclosing_radius(dist), 1)
        call = (indptr, indices, dims, 1)
        t_py, low_py = _best_of(_reduce_py.reduce_boundary, call, args.repeat)
        if _reduce_c is None:
            print(f"{n:>6} {len(dims):>10} {t_py:>10.4f} {'n/a':>10} {'n/a':>8}")
            continue
        t_c, low_c = _best_of(_reduce_c.reduce_boundary, call, args.repeat)
        assert np.array_equal(np.asarray(low_py), np.asarray(low_c)), "kernels disagree"
        print(f"{n:>6} {len(dims):>10} {t_py:>10.4f} {t_c:>10.4f} {t_py / t_c:>7.1f}x")


if __name__ == "__main__":
    main()
