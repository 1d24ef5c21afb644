"""Compiled against pure-Python kernels: spline row shifts and network simplex.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5]

Prints the best wall time per backend and the speed-up.  Both backends are
checked to agree on every input before timing.
"""
import argparse
import time

import numpy as np

from kslab import _kernels


def best_time(fn, repeat):
    out = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        out = min(out, time.perf_counter() - t0)
    return out


def shift_case(n, seed=0):
    rng = np.random.default_rng(seed)
    coef = rng.random((n, n))
    shifts = rng.uniform(-n / 4, n / 4, n)
    return (coef, shifts), lambda impl: impl.shift_rows(coef, shifts)


def simplex_case(m, seed=0):
    rng = np.random.default_rng(seed)
    P, Q = rng.random((m, 2)), rng.random((m, 2))
    a, b = rng.random(m), rng.random(m)
    a /= a.sum()
    b /= b.sum()
    C = ((P[:, None, :] - Q[None, :, :]) ** 2).sum(-1)

    def run(impl):
        return impl.network_simplex(a, b, C, 10 ** 7, 1e-13 * C.max())
    return (a, b, C), run


def agree(res_p, res_c, C=None):
    if C is None:
        return np.abs(res_p - res_c).max() < 1e-12
    cost = lambda r: float(np.sum(r[2] * C[r[0], r[1]]))  # noqa: E731
    return abs(cost(res_p) - cost(res_c)) < 1e-12


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _kernels.compiled is None:
        print("compiled extension not available; build with pip install -e .")
        return 1
    pure, comp = _kernels.pure, _kernels.compiled
    print(f"{'kernel':<24}{'size':>8}{'python [s]':>14}{'cython [s]':>14}{'speed-up':>10}")
    for n in (128, 256, 512):
        _, run = shift_case(n)
        assert agree(run(pure), run(comp))
        tp, tc = best_time(lambda: run(pure), args.repeat), best_time(lambda: run(comp), args.repeat)
        print(f"{'spline shift_rows':<24}{n:>8}{tp:>14.4g}{tc:>14.4g}{tp / tc:>10.1f}")
    for m in (50, 200, 500):
        (a, b, C), run = simplex_case(m)
        assert agree(run(pure), run(comp), C)
        rep = max(1, args.repeat // 2) if m > 200 else args.repeat
        tp, tc = best_time(lambda: run(pure), rep), best_time(lambda: run(comp), rep)
        print(f"{'network simplex':<24}{m:>8}{tp:>14.4g}{tc:>14.4g}{tp / tc:>10.1f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
