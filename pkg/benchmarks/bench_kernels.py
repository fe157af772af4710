"""Compare the compiled and numpy ADMM kernels on steering-sized QPs.

    python3 benchmarks/bench_kernels.py [--repeats 200] [--seed 0]

Each problem is a box-constrained dense QP of the size the steering layer
solves every tick (T_f * m decision variables), plus a larger equality
constrained case. The same problem set runs through both backends and the
solutions are checked against each other before timings are reported.
"""

import argparse
import time

import numpy as np

from refsteer import kernels
from refsteer.densemath import QProblem, SolverSettings, qp_solve

CASES = [
    ("lti T_f=10", 10, 0),
    ("flying T_f=15", 30, 0),
    ("hopping T_f=25", 50, 0),
    ("eq-constrained n=60", 60, 20),
]


def make_problem(rng, n, k):
    M = rng.normal(size=(n, n))
    P = M @ M.T / n + 0.1 * np.eye(n)
    q = rng.normal(size=n)
    A = rng.normal(size=(k, n)) if k else None
    b = rng.normal(size=k) if k else None
    x_free = np.linalg.solve(P, -q)
    # bounds that clip roughly half of the unconstrained optimum
    half = np.median(np.abs(x_free))
    return QProblem(P, q, A, b, lower=-half * np.ones(n), upper=half * np.ones(n))


def bench(problems, backend):
    cfg = SolverSettings(backend=backend)
    times, iters, sols = [], [], []
    for prob in problems:
        t0 = time.perf_counter()
        sol = qp_solve(prob, cfg=cfg)
        times.append(time.perf_counter() - t0)
        iters.append(sol.iterations)
        sols.append(sol.x)
    return np.array(times) * 1e3, np.array(iters), sols


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=200, help="problems per case")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    backends = [b for b in ("python", "cython") if b in kernels.BACKENDS]
    if "cython" not in backends:
        print("compiled kernel not built; timing the numpy fallback only")
    print(f"default backend: {kernels.BACKEND}")
    header = f"{'case':<22}{'backend':<9}{'p50 ms':>9}{'p99 ms':>9}{'mean it':>9}"
    print(header)
    print("-" * len(header))
    for name, n, k in CASES:
        rng = np.random.default_rng(args.seed)
        problems = [make_problem(rng, n, k) for _ in range(args.repeats)]
        results = {b: bench(problems, b) for b in backends}
        for b, (t, it, _) in results.items():
            print(f"{name:<22}{b:<9}{np.percentile(t, 50):9.3f}{np.percentile(t, 99):9.3f}"
                  f"{it.mean():9.1f}")
        if len(results) == 2:
            gap = max(np.abs(x - y).max() for x, y in zip(results["python"][2],
                                                           results["cython"][2]))
            speed = np.median(results["python"][0]) / np.median(results["cython"][0])
            print(f"{'':<22}speedup {speed:.1f}x, max solution gap {gap:.1e}")


if __name__ == "__main__":
    main()
