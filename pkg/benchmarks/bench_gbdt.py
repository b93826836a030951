"""Benchmark the boosted-tree hot kernels: numba JIT vs the numpy fallback.

The same fit runs once per path (the paths share every line of driver code
and differ only in the split/predict kernels), so the wall-clock ratio is
the JIT speedup. Run:

    python benchmarks/bench_gbdt.py [--rows 400] [--features 24] [--repeat 3]

The numpy path can also be forced process-wide with CELLNAS_NO_NUMBA=1.
"""

import argparse
import time

import numpy as np

from cellnas.surrogate import SearchRanges, fit_regressor
from cellnas.surrogate import _kernels


def synthetic_rows(rows: int, features: int, seed: int):
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(rows, features))
    y = (3.0 * X[:, 0] + np.sin(4 * X[:, 1]) + 0.5 * X[:, 2] * X[:, 3]
         + rng.normal(scale=0.05, size=rows))
    return [(X[i].tolist(), float(y[i])) for i in range(rows)]


def time_fit(rows, repeat: int) -> float:
    space = SearchRanges(iterations=300, early_stop_patience=30)
    best = float("inf")
    for r in range(repeat):
        started = time.perf_counter()
        fit_regressor(rows, space, trials=3, seed=r)
        best = min(best, time.perf_counter() - started)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--rows", type=int, default=400)
    ap.add_argument("--features", type=int, default=24)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    rows = synthetic_rows(args.rows, args.features, seed=0)

    _kernels.best_split_node = _kernels.best_split_node_numpy
    _kernels.predict_tree = _kernels.predict_tree_numpy
    numpy_s = time_fit(rows, args.repeat)
    print(f"numpy fallback : {numpy_s:8.3f} s")

    if not _kernels.HAVE_NUMBA:
        print("numba          :   unavailable (install numba or unset "
              "CELLNAS_NO_NUMBA)")
        return

    _kernels.best_split_node = _kernels.best_split_node_numba
    _kernels.predict_tree = _kernels.predict_tree_numba
    time_fit(rows[:40], 1)  # warm the JIT outside the timed region
    numba_s = time_fit(rows, args.repeat)
    print(f"numba JIT      : {numba_s:8.3f} s")
    print(f"speedup        : {numpy_s / numba_s:8.2f}x")


if __name__ == "__main__":
    main()
