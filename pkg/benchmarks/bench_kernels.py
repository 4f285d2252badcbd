"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--sizes 10 30 60]

Sizes match the Gaussian-process surrogate used during tuning (at most about
60 observations) plus one larger Cholesky case.
"""
import argparse
import timeit

import numpy as np

from neurallinear import _kernels_py

try:
    from neurallinear import _kernels
except ImportError:
    _kernels = None


def cases(n, d, rng):
    x = np.ascontiguousarray(rng.random((n, d)))
    y = np.ascontiguousarray(rng.normal(size=n))
    a = rng.normal(size=(n, n))
    spd = np.ascontiguousarray(a @ a.T + n * np.eye(n))
    b = np.ascontiguousarray(rng.normal(size=(n, 3)))
    theta = np.ascontiguousarray(np.r_[0.0, np.full(d, -0.5), -3.0])
    ls = np.ascontiguousarray(np.full(d, 0.6))
    return {
        "cholesky_lower": lambda k: k.cholesky_lower(spd),
        "cho_solve": lambda k, L={}: k.cho_solve(L.setdefault(id(k), k.cholesky_lower(spd)[0]), b),
        "matern52_cross": lambda k: k.matern52_cross(x, x, ls, 1.3),
        "gp_lml_grad": lambda k: k.gp_lml_grad(x, y, theta, 1e-8),
    }


def best_time(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[10, 30, 60, 200])
    ap.add_argument("--dim", type=int, default=6, help="input dimension of the GP cases")
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled kernels not built; run `pip install --no-build-isolation -e .` first")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':<16}{'n':>6}{'cython (us)':>14}{'numpy (us)':>14}{'speedup':>10}")
    for n in args.sizes:
        for name, fn in cases(n, args.dim, rng).items():
            fn(_kernels)  # warm caches
            fn(_kernels_py)
            tc = best_time(lambda: fn(_kernels), args.repeat)
            tp = best_time(lambda: fn(_kernels_py), args.repeat)
            print(f"{name:<16}{n:>6}{tc * 1e6:>14.1f}{tp * 1e6:>14.1f}{tp / tc:>10.2f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
