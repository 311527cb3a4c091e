"""Compare the numba kernels with their pure-numpy references.

    python benchmarks/bench_kernels.py [--repeat 5]

Each kernel is run once to trigger compilation, then timed; results of the
two backends are compared to round-off.
"""
import argparse
import time

import numpy as np

from liouvlab import _kernels as K


def _time(fn, repeat):
    fn()
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def _maxdiff(a, b):
    if isinstance(a, tuple):
        return max(_maxdiff(x, y) for x, y in zip(a, b))
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(b))))


def cases(rng):
    x = rng.uniform(-2, 2, 400) + 1j * rng.uniform(0.1, 2, 400)
    y = rng.uniform(-2, 2, 20000) + 1j * rng.uniform(0.0, 2, 20000)
    w = rng.standard_normal(20000)
    X = rng.standard_normal((2000, 800))
    A = rng.uniform(0, 1, 800)
    V = rng.uniform(0.5, 1.5, 800)
    return {
        "kernel_sums": (lambda: K.kernel_sums(x, y, w), lambda: K.kernel_sums_numpy(x, y, w)),
        "cauchy_pair": (lambda: K.cauchy_pair(x, y, w), lambda: K.cauchy_pair_numpy(x, y, w)),
        "expsum": (lambda: K.expsum(X, A, V, 0.5), lambda: K.expsum_numpy(X, A, V, 0.5, 0.5)),
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)
    print(f"active backend: {K.BACKEND}")
    print(f"{'kernel':<14}{'active [ms]':>14}{'numpy [ms]':>14}{'speedup':>10}{'rel diff':>12}")
    for name, (fast, ref) in cases(np.random.default_rng(args.seed)).items():
        tf, of = _time(fast, args.repeat)
        tr, orf = _time(ref, args.repeat)
        print(f"{name:<14}{1e3 * tf:>14.2f}{1e3 * tr:>14.2f}{tr / tf:>10.2f}{_maxdiff(of, orf):>12.2e}")


if __name__ == "__main__":
    main()
