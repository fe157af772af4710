"""Pure-Python/numpy ADMM iteration kernel.

Mirrors ``refsteer._admm`` (Cython) operation for operation so that either
backend can be selected at import time.
"""

import numpy as np
from scipy.linalg import cho_solve

SOLVED = 0
RUNNING = 1
INFEASIBLE = 2


def admm_run(P, q, A, l, u, L, rho, sigma, alpha, x, z, y, max_iter,
             eps_abs, eps_rel, eps_pinf):
    """Run up to ``max_iter`` ADMM iterations, updating x, z, y in place.

    ``L`` is the lower Cholesky factor of ``P + sigma*I + A^T diag(rho) A``.
    Returns ``(iterations, status, primal_residual, dual_residual)``.
    """
    r_prim = np.inf
    r_dual = np.inf
    inv_rho = 1.0 / rho
    for it in range(1, max_iter + 1):
        rhs = sigma * x - q + A.T @ (rho * z - y)
        xt = cho_solve((L, True), rhs)
        zt = A @ xt
        x_new = alpha * xt + (1.0 - alpha) * x
        zh = alpha * zt + (1.0 - alpha) * z
        z_new = np.clip(zh + inv_rho * y, l, u)
        y_new = y + rho * (zh - z_new)
        dy = y_new - y

        x[:] = x_new
        z[:] = z_new
        y[:] = y_new

        Ax = A @ x
        Px = P @ x
        ATy = A.T @ y
        r_prim = _norm_inf(Ax - z)
        r_dual = _norm_inf(Px + q + ATy)
        eps_p = eps_abs + eps_rel * max(_norm_inf(Ax), _norm_inf(z))
        eps_d = eps_abs + eps_rel * max(_norm_inf(Px), _norm_inf(ATy),
                                        _norm_inf(q))
        if r_prim <= eps_p and r_dual <= eps_d:
            return it, SOLVED, r_prim, r_dual
        if _primal_infeasible(A, l, u, dy, eps_pinf):
            return it, INFEASIBLE, r_prim, r_dual
    return max_iter, RUNNING, r_prim, r_dual


def _norm_inf(v):
    return float(np.max(np.abs(v))) if v.size else 0.0


def _primal_infeasible(A, l, u, dy, eps_pinf):
    ndy = _norm_inf(dy)
    if ndy <= 0.0:
        return False
    if _norm_inf(A.T @ dy) > eps_pinf * ndy:
        return False
    pos = dy > 0.0
    neg = dy < 0.0
    if np.any(np.isinf(u[pos])) or np.any(np.isinf(l[neg])):
        return False
    support = float(np.sum(u[pos] * dy[pos]) + np.sum(l[neg] * dy[neg]))
    return support < -eps_pinf * ndy
