"""Compare the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints one line per kernel with the time per call for each backend and the
speed-up. Both backends are also checked for agreement on the same inputs.
"""

import argparse
import timeit

import numpy as np

from icps import _kernels_py as py

try:
    from icps import _kernels as cy
except ImportError:
    cy = None


def cases(rng):
    n = 2048
    r = rng.normal(size=n)
    v = rng.normal(size=n)
    nv = rng.normal(size=n)
    d = (rng.random(n) < 0.01).astype(float)
    cut = d.copy()
    cut[-1] = 1.0
    A = np.zeros((9, 8))
    A[rng.integers(0, 9, 8), np.arange(8)] = 1.0
    P = A * rng.uniform(1e-6, 1e-2, (9, 8))
    g = rng.uniform(7e-7, 9e-5, (9, 8))
    return {
        "cartpole_step": lambda k: k.cartpole_step(0.01, 0.0, 0.05, 0.0, 1.0, 1.0, 0.1, 0.5,
                                                   9.8, 1 / 12, 4),
        "gae (2048)": lambda k: k.gae(r, v, nv, d, cut, 0.99, 0.95),
        "rate_rows (9x8)": lambda k: k.rate_rows(A, P, g, 6.3e-10, 180e3, 0.6),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    if cy is None:
        print("compiled extension not built; only the Python backend is available")
    print(f"{'kernel':<18}{'python [us]':>14}{'cython [us]':>14}{'speed-up':>10}")
    for name, fn in cases(rng).items():
        calls = 20 if name.startswith("gae") else 2000
        t_py = min(timeit.repeat(lambda: fn(py), number=calls, repeat=args.repeat)) / calls
        if cy is None:
            print(f"{name:<18}{t_py * 1e6:>14.2f}{'-':>14}{'-':>10}")
            continue
        a, b = np.asarray(fn(py), dtype=float), np.asarray(fn(cy), dtype=float)
        if not np.allclose(a, b, rtol=1e-12, atol=1e-12):
            raise SystemExit(f"{name}: backends disagree")
        t_cy = min(timeit.repeat(lambda: fn(cy), number=calls, repeat=args.repeat)) / calls
        print(f"{name:<18}{t_py * 1e6:>14.2f}{t_cy * 1e6:>14.2f}{t_py / t_cy:>9.1f}x")


if __name__ == "__main__":
    main()
