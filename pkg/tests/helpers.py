"""Shared generators for the test suite."""

import numpy as np

from refsteer.behavior import IOTrajectory, LTISystem, lag, simulate
from refsteer.densemath import rank


def controllability(sys):
    blocks, M = [], sys.B
    for _ in range(sys.n):
        blocks.append(M)
        M = sys.A @ M
    return np.hstack(blocks)


def random_lti(rng, n=None, m=None, p=None, observable=True):
    """Random stable, controllable (and by default observable) system with D = 0."""
    n = n or int(rng.integers(1, 5))
    m = m or int(rng.integers(1, 3))
    p = p or int(rng.integers(1, 3))
    while True:
        A = rng.normal(size=(n, n))
        A *= rng.uniform(0.3, 0.95) / max(np.abs(np.linalg.eigvals(A)).max(), 1e-9)
        sys = LTISystem(A, rng.normal(size=(n, m)), rng.normal(size=(p, n)))
        if rank(controllability(sys), 1e-8) < n:
            continue
        if observable:
            try:
                lag(sys)
            except Exception:
                continue
        return sys


def lti_data(sys, T, rng, x0=None, dt=1.0):
    u = rng.normal(size=(T, sys.m))
    x0 = rng.normal(size=sys.n) if x0 is None else x0
    y, _ = simulate(sys, u, x0)
    return IOTrajectory(dt, u, y)


def gauss_rank(M, tol=1e-9):
    """Row-echelon rank with partial pivoting (no SVD)."""
    A = np.array(M, dtype=float)
    r = 0
    rows, cols = A.shape
    for c in range(cols):
        if r == rows:
            break
        piv = r + int(np.argmax(np.abs(A[r:, c])))
        if abs(A[piv, c]) <= tol * max(1.0, np.abs(M).max()):
            continue
        A[[r, piv]] = A[[piv, r]]
        A[r + 1:] -= np.outer(A[r + 1:, c] / A[r, c], A[r])
        r += 1
    return r
