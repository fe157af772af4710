# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled ADMM iteration kernel; same contract as ``refsteer._admm_py``."""

from libc.math cimport fabs, INFINITY, isinf

cdef enum:
    SOLVED = 0
    RUNNING = 1
    INFEASIBLE = 2


cdef inline double _amax(double[::1] v, Py_ssize_t n) noexcept nogil:
    cdef double m = 0.0, a
    cdef Py_ssize_t i
    for i in range(n):
        a = fabs(v[i])
        if a > m:
            m = a
    return m


cdef void _chol_solve(double[:, ::1] L, double[::1] b, double[::1] out,
                      Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double s
    for i in range(n):
        s = b[i]
        for j in range(i):
            s -= L[i, j] * out[j]
        out[i] = s / L[i, i]
    for i in range(n - 1, -1, -1):
        s = out[i]
        for j in range(i + 1, n):
            s -= L[j, i] * out[j]
        out[i] = s / L[i, i]


def admm_run(double[:, ::1] P, double[::1] q, double[:, ::1] A,
             double[::1] l, double[::1] u, double[:, ::1] L,
             double[::1] rho, double sigma, double alpha,
             double[::1] x, double[::1] z, double[::1] y,
             int max_iter, double eps_abs, double eps_rel, double eps_pinf):
    """Run up to ``max_iter`` ADMM iterations, updating x, z, y in place.

    Returns ``(iterations, status, primal_residual, dual_residual)``.
    """
    cdef Py_ssize_t n = P.shape[0]
    cdef Py_ssize_t m = A.shape[0]
    cdef Py_ssize_t i, j
    cdef int it, done = 0, status = RUNNING
    cdef double s, zh, znew, ynew, r_prim = INFINITY, r_dual = INFINITY
    cdef double eps_p, eps_d, nAx, nz, nPx, nATy, nq, ndy, support
    cdef bint cert

    import numpy as np
    cdef double[::1] rhs = np.empty(n)
    cdef double[::1] xt = np.empty(n)
    cdef double[::1] w = np.empty(m)
    cdef double[::1] dy = np.empty(m)
    cdef double[::1] ax = np.empty(m)
    cdef double[::1] px = np.empty(n)
    cdef double[::1] aty = np.empty(n)
    cdef double[::1] atdy = np.empty(n)

    with nogil:
        nq = _amax(q, n)
        for it in range(1, max_iter + 1):
            for i in range(m):
                w[i] = rho[i] * z[i] - y[i]
            for j in range(n):
                rhs[j] = sigma * x[j] - q[j]
            for i in range(m):
                s = w[i]
                for j in range(n):
                    rhs[j] += A[i, j] * s
            _chol_solve(L, rhs, xt, n)

            for i in range(m):
                s = 0.0
                for j in range(n):
                    s += A[i, j] * xt[j]
                zh = alpha * s + (1.0 - alpha) * z[i]
                znew = zh + y[i] / rho[i]
                if znew < l[i]:
                    znew = l[i]
                elif znew > u[i]:
                    znew = u[i]
                ynew = y[i] + rho[i] * (zh - znew)
                dy[i] = ynew - y[i]
                y[i] = ynew
                z[i] = znew
            for j in range(n):
                x[j] = alpha * xt[j] + (1.0 - alpha) * x[j]

            for i in range(m):
                s = 0.0
                for j in range(n):
                    s += A[i, j] * x[j]
                ax[i] = s
            for j in range(n):
                aty[j] = 0.0
                atdy[j] = 0.0
            for i in range(m):
                for j in range(n):
                    aty[j] += A[i, j] * y[i]
                    atdy[j] += A[i, j] * dy[i]
            for i in range(n):
                s = 0.0
                for j in range(n):
                    s += P[i, j] * x[j]
                px[i] = s

            r_prim = 0.0
            for i in range(m):
                s = fabs(ax[i] - z[i])
                if s > r_prim:
                    r_prim = s
            r_dual = 0.0
            for j in range(n):
                s = fabs(px[j] + q[j] + aty[j])
                if s > r_dual:
                    r_dual = s
            nAx = _amax(ax, m)
            nz = _amax(z, m)
            nPx = _amax(px, n)
            nATy = _amax(aty, n)
            eps_p = eps_abs + eps_rel * (nAx if nAx > nz else nz)
            s = nPx if nPx > nATy else nATy
            eps_d = eps_abs + eps_rel * (s if s > nq else nq)
            done = it
            if r_prim <= eps_p and r_dual <= eps_d:
                status = SOLVED
                break

            ndy = _amax(dy, m)
            if ndy > 0.0 and _amax(atdy, n) <= eps_pinf * ndy:
                cert = True
                support = 0.0
                for i in range(m):
                    if dy[i] > 0.0:
                        if isinf(u[i]):
                            cert = False
                            break
                        support += u[i] * dy[i]
                    elif dy[i] < 0.0:
                        if isinf(l[i]):
                            cert = False
                            break
                        support += l[i] * dy[i]
                if cert and support < -eps_pinf * ndy:
                    status = INFEASIBLE
                    break
    return done, status, r_prim, r_dual
