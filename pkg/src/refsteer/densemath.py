"""Dense linear algebra helpers and a warm-startable ADMM QP solver.

The QP solved here is::

    minimize    1/2 x'Px + q'x
    subject to  A_eq x = b_eq,  lower <= x <= upper

It is mapped onto the operator-splitting form ``l <= Ax <= u`` with
``A = [A_eq; I_b]`` where ``I_b`` keeps only variables that have at least one
finite bound. Iterations run in :mod:`refsteer.kernels`.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor

from . import kernels
from .errors import InvalidInputError

__all__ = [
    "as_matrix", "pinv", "rank", "QProblem", "QSolution", "SolverSettings",
    "qp_solve",
]


def as_matrix(M, name="matrix"):
    """Return ``M`` as a finite 2-D float array or raise InvalidInputError."""
    arr = np.asarray(M, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1) if arr.size else arr.reshape(0, 0)
    if arr.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return arr


def _as_vector(v, n, name):
    arr = np.asarray(v, dtype=float).reshape(-1)
    if arr.size != n:
        raise InvalidInputError(f"{name} has length {arr.size}, expected {n}")
    return arr


def pinv(M, rcond=1e-10):
    """Moore-Penrose pseudo-inverse via SVD.

    Singular values below ``rcond * sigma_max`` are treated as zero.
    """
    A = as_matrix(M)
    if not 0.0 < rcond < 1.0:
        raise InvalidInputError(f"rcond must lie in (0, 1), got {rcond}")
    if A.size == 0:
        return np.zeros((A.shape[1], A.shape[0]))
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    keep = s > rcond * s[0] if s.size else s.astype(bool)
    s_inv = np.zeros_like(s)
    s_inv[keep] = 1.0 / s[keep]
    return (Vt.T * s_inv) @ U.T


def rank(M, rtol=1e-10):
    """Number of singular values above ``rtol * sigma_max``."""
    A = as_matrix(M)
    if A.size == 0:
        return 0
    s = np.linalg.svd(A, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > rtol * s[0]))


@dataclass
class QProblem:
    """Convex QP ``min 1/2 x'Px + q'x  s.t. A_eq x = b_eq, lower <= x <= upper``."""

    P: np.ndarray
    q: np.ndarray
    A_eq: Optional[np.ndarray] = None
    b_eq: Optional[np.ndarray] = None
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None

    def __post_init__(self):
        self.P = as_matrix(self.P, "P")
        n = self.P.shape[0]
        if self.P.shape != (n, n):
            raise InvalidInputError(f"P must be square, got {self.P.shape}")
        if not np.allclose(self.P, self.P.T, rtol=0.0,
                           atol=1e-10 * max(1.0, np.abs(self.P).max(initial=0))):
            raise InvalidInputError("P is not symmetric")
        self.P = 0.5 * (self.P + self.P.T)
        self.q = _as_vector(self.q, n, "q")
        if not np.all(np.isfinite(self.q)):
            raise InvalidInputError("q contains non-finite entries")
        if self.A_eq is None:
            self.A_eq = np.zeros((0, n))
            self.b_eq = np.zeros(0)
        else:
            self.A_eq = as_matrix(self.A_eq, "A_eq")
            if self.A_eq.size == 0:
                self.A_eq = self.A_eq.reshape(0, n)
            if self.A_eq.shape[1] != n:
                raise InvalidInputError(
                    f"A_eq has {self.A_eq.shape[1]} columns, expected {n}")
            self.b_eq = _as_vector(self.b_eq, self.A_eq.shape[0], "b_eq")
            if not np.all(np.isfinite(self.b_eq)):
                raise InvalidInputError("b_eq contains non-finite entries")
        self.lower = (np.full(n, -np.inf) if self.lower is None
                      else _as_vector(self.lower, n, "lower"))
        self.upper = (np.full(n, np.inf) if self.upper is None
                      else _as_vector(self.upper, n, "upper"))
        if np.any(np.isnan(self.lower)) or np.any(np.isnan(self.upper)):
            raise InvalidInputError("bounds contain NaN")
        if np.any(self.lower > self.upper):
            raise InvalidInputError("lower bound exceeds upper bound")

    @property
    def n(self):
        return self.P.shape[0]


@dataclass
class QSolution:
    """Solver output; ``y`` and ``z`` carry the ADMM state for warm starts."""

    x: np.ndarray
    status: str
    iterations: int
    primal_residual: float
    dual_residual: float
    y: np.ndarray = field(repr=False, default=None)
    z: np.ndarray = field(repr=False, default=None)
    rho: float = 0.1
    polished: bool = False


@dataclass
class SolverSettings:
    eps_abs: float = 1e-6
    eps_rel: float = 1e-6
    eps_pinf: float = 1e-6
    max_iter: int = 4000
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    eq_rho_scale: float = 1e3
    adaptive_rho: bool = True
    adaptive_rho_interval: int = 25
    adaptive_rho_tolerance: float = 5.0
    polish: bool = True
    backend: Optional[str] = None


class _Splitting:
    """Operator-splitting data shared by every iteration of one solve."""

    def __init__(self, prob):
        n = prob.n
        bounded = np.isfinite(prob.lower) | np.isfinite(prob.upper)
        idx = np.flatnonzero(bounded)
        Ib = np.zeros((idx.size, n))
        Ib[np.arange(idx.size), idx] = 1.0
        self.n = n
        self.n_eq = prob.A_eq.shape[0]
        self.bound_idx = idx
        self.A = np.ascontiguousarray(np.vstack([prob.A_eq, Ib]))
        self.l = np.concatenate([prob.b_eq, prob.lower[idx]])
        self.u = np.concatenate([prob.b_eq, prob.upper[idx]])
        self.is_eq = np.abs(self.u - self.l) < 1e-12
        self.P = np.ascontiguousarray(prob.P)
        self.q = np.ascontiguousarray(prob.q)

    def rho_vector(self, rho, cfg):
        r = np.full(self.A.shape[0], rho)
        r[self.is_eq] *= cfg.eq_rho_scale
        return r

    def factor(self, rho_vec, sigma):
        K = self.P + sigma * np.eye(self.n) + self.A.T @ (rho_vec[:, None] * self.A)
        c, _ = cho_factor(K, lower=True)
        return np.ascontiguousarray(np.tril(c))


def qp_solve(prob, warm_start=None, cfg=None):
    """Solve ``prob`` by over-relaxed ADMM with optional warm start.

    Returns a :class:`QSolution` with status ``solved``, ``max_iter``
    (best iterate kept) or ``infeasible``.
    """
    cfg = cfg or SolverSettings()
    run = kernels.BACKENDS[cfg.backend] if cfg.backend else kernels.admm_run
    S = _Splitting(prob)
    m = S.A.shape[0]

    if warm_start is not None and warm_start.x is not None \
            and np.size(warm_start.x) == S.n:
        x = np.array(warm_start.x, dtype=float)
        z = (np.array(warm_start.z, dtype=float)
             if warm_start.z is not None and np.size(warm_start.z) == m
             else np.clip(S.A @ x, S.l, S.u))
        y = (np.array(warm_start.y, dtype=float)
             if warm_start.y is not None and np.size(warm_start.y) == m
             else np.zeros(m))
        rho = warm_start.rho
    else:
        x = np.zeros(S.n)
        z = np.clip(np.zeros(m), S.l, S.u)
        y = np.zeros(m)
        rho = cfg.rho

    total = 0
    status = kernels.RUNNING
    r_p = r_d = np.inf
    chunk = cfg.adaptive_rho_interval if cfg.adaptive_rho else cfg.max_iter
    while total < cfg.max_iter:
        rho_vec = S.rho_vector(rho, cfg)
        L = S.factor(rho_vec, cfg.sigma)
        steps = min(chunk, cfg.max_iter - total)
        it, status, r_p, r_d = run(S.P, S.q, S.A, S.l, S.u, L, rho_vec,
                                   cfg.sigma, cfg.alpha, x, z, y, steps,
                                   cfg.eps_abs, cfg.eps_rel, cfg.eps_pinf)
        total += it
        if status != kernels.RUNNING:
            break
        if cfg.adaptive_rho:
            rho = _adapt_rho(S, x, z, y, rho, cfg)

    if status == kernels.INFEASIBLE:
        return QSolution(x=x, status="infeasible", iterations=total,
                         primal_residual=r_p, dual_residual=r_d, y=y, z=z,
                         rho=rho)

    sol = QSolution(x=x, status="solved" if status == kernels.SOLVED
                    else "max_iter", iterations=total, primal_residual=r_p,
                    dual_residual=r_d, y=y, z=z, rho=rho)
    if cfg.polish and m >= 0:
        _polish(S, sol)
    return sol


def _adapt_rho(S, x, z, y, rho, cfg):
    Ax = S.A @ x
    Px = S.P @ x
    ATy = S.A.T @ y
    tiny = 1e-30
    r_p = np.max(np.abs(Ax - z), initial=0.0)
    r_d = np.max(np.abs(Px + S.q + ATy), initial=0.0)
    sp = max(np.max(np.abs(Ax), initial=0.0), np.max(np.abs(z), initial=0.0))
    sd = max(np.max(np.abs(Px), initial=0.0), np.max(np.abs(ATy), initial=0.0),
             np.max(np.abs(S.q), initial=0.0))
    ratio = (r_p / (sp + tiny)) / (r_d / (sd + tiny) + tiny)
    new = float(np.clip(rho * np.sqrt(ratio), 1e-6, 1e6))
    tol = cfg.adaptive_rho_tolerance
    return new if (new > rho * tol or new < rho / tol) else rho


def _polish(S, sol):
    """Refine the ADMM iterate by solving the KKT system on the guessed active set."""
    x, y, z = sol.x, sol.y, sol.z
    lo_act = (z - S.l < -y) | S.is_eq
    up_act = (S.u - z < y) & ~S.is_eq
    act = lo_act | up_act
    Aa = S.A[act]
    ba = np.where(lo_act, S.l, S.u)[act]
    n, k = S.n, Aa.shape[0]
    K = np.zeros((n + k, n + k))
    K[:n, :n] = S.P
    K[:n, n:] = Aa.T
    K[n:, :n] = Aa
    rhs = np.concatenate([-S.q, ba])
    sol_kkt = np.linalg.lstsq(K, rhs, rcond=None)[0]
    xp = sol_kkt[:n]
    ya = sol_kkt[n:]
    yp = np.zeros_like(y)
    yp[act] = ya

    ineq_lo = lo_act[act] & ~S.is_eq[act]
    ineq_up = up_act[act]
    scale = 1e-7 * max(1.0, np.max(np.abs(ya), initial=0.0))
    if np.any(ya[ineq_lo] > scale) or np.any(ya[ineq_up] < -scale):
        return
    Ax = S.A @ xp
    zp = np.clip(Ax, S.l, S.u)
    r_p = float(np.max(np.abs(Ax - zp), initial=0.0))
    r_d = float(np.max(np.abs(S.P @ xp + S.q + S.A.T @ yp), initial=0.0))
    if max(r_p, r_d) <= max(sol.primal_residual, sol.dual_residual) \
            or (r_p <= 1e-9 and r_d <= 1e-9):
        sol.x, sol.y, sol.z = xp, yp, zp
        sol.primal_residual, sol.dual_residual = r_p, r_d
        sol.polished = True
        if sol.status == "max_iter" and r_p <= 1e-7 and r_d <= 1e-7:
            sol.status = "solved"
