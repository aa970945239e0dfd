"""Compare the compiled and pure-Python kernels.

    python benchmarks/bench_kernels.py [--rows 20000] [--repeat 5] [--csv out.csv]

Prints one line per (kernel, n) with the best-of-``repeat`` wall time for
each backend, the speedup, and the max relative difference of the outputs.
"""

import argparse
import csv
import sys
import time

import numpy as np

from curvquot import _backend
from curvquot.ineq_lab import ConeSampler


def best_time(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def max_rel(a, b):
    a = np.concatenate([np.ravel(x) for x in (a if isinstance(a, tuple) else (a,))])
    b = np.concatenate([np.ravel(x) for x in (b if isinstance(b, tuple) else (b,))])
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-300)
    return float(np.max(np.abs(a - b) / scale))


def cases(n):
    return {
        "esp_table": lambda K, lam: K.esp_table(lam),
        "esp_deleted": lambda K, lam: K.esp_deleted(lam),
        "esp_deleted2": lambda K, lam: K.esp_deleted2(lam),
        "quotient_jet": lambda K, lam: K.quotient_jet(lam, n - 2),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=20_000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--n", type=int, nargs="+", default=[3, 5, 7])
    ap.add_argument("--csv", default=None)
    args = ap.parse_args(argv)

    py = _backend.python_kernels
    cy = _backend.compiled_kernels
    if cy is None:
        print("compiled extension not built; run `pip install -e . --no-build-isolation`", file=sys.stderr)
        return 1

    rows = []
    print(f"{'kernel':<14}{'n':>3}{'python s':>12}{'cython s':>12}{'speedup':>10}{'max rel diff':>14}")
    for n in args.n:
        lam = ConeSampler(n, "loguniform", seed=0).sample(args.rows)
        for name, fn in cases(n).items():
            t_py, out_py = best_time(lambda: fn(py, lam), args.repeat)
            t_cy, out_cy = best_time(lambda: fn(cy, lam), args.repeat)
            diff = max_rel(out_py, out_cy)
            rows.append((name, n, args.rows, t_py, t_cy, t_py / t_cy, diff))
            print(f"{name:<14}{n:>3}{t_py:>12.4f}{t_cy:>12.4f}{t_py / t_cy:>10.1f}{diff:>14.1e}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kernel", "n", "rows", "python_s", "cython_s", "speedup", "max_rel_diff"])
            w.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
