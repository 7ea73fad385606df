"""Time the compiled kernels against their numpy fallback.

Usage::

    python benchmarks/bench_kernels.py --r 2000 --m 15 --repeat 5

Prints one line per kernel with the best-of-``repeat`` wall time of each
backend and their ratio.  Both backends are imported directly, so the
``SPARSEFIELD_PURE_PYTHON`` setting does not matter here.
"""
import argparse
import time

import numpy as np

from sparsefield import _kernels_py
from sparsefield._backend import compiled_kernels
from sparsefield.covariance import CovarianceModel
from sparsefield.geometry import Domain, uniform_locations
from sparsefield.sparse_process import NearestM, make_reference_set


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(r, m, reps):
    rs = make_reference_set(uniform_locations(Domain.square(10.0), r, 0), NearestM(m))
    args = CovarianceModel().kernel_args()
    coeffs, condvar, _ = _kernels_py.vecchia_factor(rs.locs, rs.locs, rs.nbr, rs.counts, *args, 1e-10)
    sd = np.sqrt(np.maximum(condvar, 0.0))
    W = np.random.default_rng(1).standard_normal((reps, r))
    X = rs.locs[: min(r, 1500)]
    return {
        "cov_cross": lambda k: k.cov_cross(X, X, *args),
        "vecchia_factor": lambda k: k.vecchia_factor(rs.locs, rs.locs, rs.nbr, rs.counts, *args, 1e-10),
        "ancestral_sample": lambda k: k.ancestral_sample(rs.nbr, rs.counts, coeffs, sd, 0.0, W),
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--r", type=int, default=2000, help="reference set size")
    p.add_argument("--m", type=int, default=15, help="neighbours per reference point")
    p.add_argument("--reps", type=int, default=50, help="replications for ancestral sampling")
    p.add_argument("--repeat", type=int, default=5, help="timing trials per kernel")
    a = p.parse_args(argv)
    cy = compiled_kernels()
    if cy is None:
        raise SystemExit("compiled extension not built; run pip install -e . first")
    print(f"{'kernel':<18} {'cython_s':>10} {'python_s':>10} {'speedup':>8}")
    for name, fn in cases(a.r, a.m, a.reps).items():
        tc = best_of(lambda: fn(cy), a.repeat)
        tp = best_of(lambda: fn(_kernels_py), a.repeat)
        print(f"{name:<18} {tc:>10.4f} {tp:>10.4f} {tp / tc:>7.1f}x")


if __name__ == "__main__":
    main()
