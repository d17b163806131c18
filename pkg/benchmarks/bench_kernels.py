"""Time the compiled filter-bank kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Each case runs forward+backward for M filters of N taps on a T x D
sequence, the unit of work done per sample during training.
"""
import argparse
import math
import timeit

import numpy as np

from tafilter import _kernels_py

try:
    from tafilter import _kernels
except ImportError:
    _kernels = None

CASES = [
    # (label, M, N, T, D)
    ("static M=15 N=1", 15, 1, 60, 16),
    ("lstm M=3 N=5", 3, 5, 60, 16),
    ("pyramid M=15 N=1, long", 15, 1, 400, 64),
    ("wide M=8 N=8", 8, 8, 200, 128),
]


def make_case(M, N, T, D, seed=0):
    rng = np.random.default_rng(seed)
    params = np.column_stack([
        rng.normal(0.0, 0.4, M),
        rng.uniform(-1.0, 0.0, M),
        rng.uniform(0.0, 2.0 * math.log(T / 4.0), M),
    ])
    x = rng.normal(size=(T, D))
    upstream = rng.normal(size=(M, N, D))
    return np.ascontiguousarray(params), x, upstream


def step(mod, params, x, upstream, N):
    weights, mu, rowsum, out = mod.bank_forward(params, x.shape[0], N, x)
    mod.bank_backward(params, weights, mu, rowsum, x, upstream)
    return out


def best_time(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--number", type=int, default=50)
    args = ap.parse_args(argv)

    if _kernels is None:
        print("compiled extension not built; only the numpy fallback is timed")
    print(f"{'case':<26}{'numpy (us)':>12}{'cython (us)':>13}{'speedup':>9}")
    for label, M, N, T, D in CASES:
        params, x, upstream = make_case(M, N, T, D)
        t_py = best_time(lambda: step(_kernels_py, params, x, upstream, N), args.repeat, args.number)
        if _kernels is None:
            print(f"{label:<26}{t_py * 1e6:>12.1f}{'-':>13}{'-':>9}")
            continue
        a = step(_kernels_py, params, x, upstream, N)
        b = step(_kernels, params, x, upstream, N)
        assert np.allclose(a, b, rtol=1e-12, atol=1e-12), label
        t_cy = best_time(lambda: step(_kernels, params, x, upstream, N), args.repeat, args.number)
        print(f"{label:<26}{t_py * 1e6:>12.1f}{t_cy * 1e6:>13.1f}{t_py / t_cy:>8.1f}x")


if __name__ == "__main__":
    main()
