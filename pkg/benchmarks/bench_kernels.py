"""Time the numba and numpy versions of the two hot kernels.

    python benchmarks/bench_kernels.py [--repeat 5] [--n 673]

One SGD epoch over an n x 11 matrix through an 11-30-18-1 network, and a
full SMO solve on an n-row polynomial Gram matrix. The first numba call
is a warm-up so compilation is not timed.
"""
import argparse
import time

import numpy as np

from mammo import kernels
from mammo.svm import KernelParams, gram


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def bench_sgd(n, repeat):
    rng = np.random.default_rng(0)
    X = rng.random((n, 11))
    t = (rng.random(n) < 0.46).astype(np.float64)
    sizes, _, _, n_params = kernels.layout([11, 30, 18, 1])
    p0 = rng.uniform(-0.5, 0.5, n_params)
    order = rng.permutation(n)
    out = {}
    for backend in ("numba", "numpy"):
        def run():
            kernels.sgd_epoch(p0.copy(), np.zeros(n_params), sizes, X, t, order, 0.1, 0.9, backend)
        run()
        out[backend] = _best(run, repeat)
    return out


def bench_smo(n, repeat):
    rng = np.random.default_rng(1)
    X = rng.random((n, 11))
    y = np.where(X[:, :3].sum(axis=1) + 0.3 * rng.standard_normal(n) > 1.5, 1.0, -1.0)
    K = gram(X, X, KernelParams())
    out = {}
    for backend in ("numba", "numpy"):
        def run():
            kernels.smo(K, y, 10.0, 1e-3, max_passes=10, backend=backend)
        run()
        out[backend] = _best(run, repeat)
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--n", type=int, default=673, help="rows for the SGD epoch")
    ap.add_argument("--smo-n", type=int, default=200, help="rows for the SMO solve")
    args = ap.parse_args()
    rows = [("sgd_epoch", bench_sgd(args.n, args.repeat)), ("smo", bench_smo(args.smo_n, args.repeat))]
    print(f"{'kernel':<10} {'numba s':>10} {'numpy s':>10} {'speed-up':>9}")
    for name, r in rows:
        print(f"{name:<10} {r['numba']:10.4f} {r['numpy']:10.4f} {r['numpy'] / r['numba']:9.1f}x")


if __name__ == "__main__":
    main()
