"""Compiled versus numpy projection kernel on descent-shaped batches.

    python benchmarks/bench_projection.py [--rows 100] [--horizon 52] [--repeat 200]
"""

import argparse
import timeit

import numpy as np

from dpdco import _kernels_py

try:
    from dpdco import _kernels
except ImportError:  # extension not built
    _kernels = None


def batch(rows, horizon, seed=0):
    rng = np.random.default_rng(seed)
    a = np.where(rng.random((rows, horizon)) < 0.5, 3.3, 0.0)
    b = rng.uniform(28.0, 40.0, rows)
    b = np.minimum(b, a.sum(axis=1))
    x0 = rng.normal(0.0, 2.0, (rows, horizon))
    return x0, a, b


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--rows", type=int, default=100)
    p.add_argument("--horizon", type=int, default=52)
    p.add_argument("--repeat", type=int, default=200)
    args = p.parse_args(argv)

    x0, a, b = batch(args.rows, args.horizon)
    out = np.empty_like(x0)
    backends = [("numpy", _kernels_py)] + ([("cython", _kernels)] if _kernels else [])
    results = {}
    for name, mod in backends:
        t = min(timeit.repeat(lambda: mod.project_rows(x0, a, b, out), number=args.repeat, repeat=3))
        results[name] = t / args.repeat
        print(f"{name:>7}: {results[name] * 1e6:9.1f} us per batch ({results[name] / args.rows * 1e6:.2f} us per row)")
    if len(results) == 2:
        gap = np.abs(_kernels.project_rows(x0, a, b) - _kernels_py.project_rows(x0, a, b)).max()
        print(f"speedup {results['numpy'] / results['cython']:.1f}x, max backend difference {gap:.2e}")
    else:
        print("compiled kernel not available; build with `pip install -e . --no-build-isolation`")


if __name__ == "__main__":
    main()
