"""Time the simulated-likelihood and diversion kernels under both backends.

Usage::

    python benchmarks/bench_kernels.py [--n 20000] [--draws 50] [--k 1 3 7] [--repeat 3]

Each configuration is timed after one warm-up call (which also triggers
numba compilation) and the best of ``--repeat`` runs is reported, together
with the largest absolute difference between the two backends' outputs.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from embedchoice import _kernels


def make_inputs(n: int, J: int, R: int, K: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    u0 = rng.normal(size=(n, J))
    avail = np.ones((n, J), dtype=bool)
    chosen = rng.integers(0, J, n)
    z = rng.normal(size=(n, J, K))
    ind_ptr = np.arange(n + 1)
    eta = rng.normal(size=(n, R, K))
    sig = rng.uniform(0.2, 1.5, K)
    return u0, avail, chosen, z, ind_ptr, eta, sig


def best_time(fn, repeat: int):
    out = fn()
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=20_000, help="observations (one per individual)")
    ap.add_argument("--products", type=int, default=10)
    ap.add_argument("--draws", type=int, default=50)
    ap.add_argument("--k", type=int, nargs="+", default=[1, 3, 7], help="random coefficients")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    threads = _kernels.set_threads(args.threads)
    print(f"n={args.n} J={args.products} R={args.draws} threads={threads}")
    print(f"{'kernel':<14}{'K':>3}{'numba s':>10}{'numpy s':>10}{'speedup':>9}{'max diff':>11}")
    for K in args.k:
        inputs = make_inputs(args.n, args.products, args.draws, K)
        cases = {
            "loglik": lambda: _kernels.panel_loglik(*inputs),
            "removal": lambda: _kernels.removal_shares_all(inputs[0][:2000], inputs[1][:2000], inputs[3][:2000], inputs[5][:2000], inputs[6]),
        }
        for name, fn in cases.items():
            results = {}
            for backend in ("numba", "numpy"):
                _kernels.set_backend(backend)
                results[backend] = best_time(fn, args.repeat)
            diff = max(float(np.max(np.abs(a - b))) for a, b in zip(results["numba"][1], results["numpy"][1]))
            tn, tp = results["numba"][0], results["numpy"][0]
            print(f"{name:<14}{K:>3}{tn:>10.3f}{tp:>10.3f}{tp / tn:>9.1f}{diff:>11.1e}")
    _kernels.set_backend("numba")


if __name__ == "__main__":
    main()
