"""Behavioral-systems toolkit: Hankel matrices, persistency of excitation,
past/future partitions, and observability utilities.

Joint vectors are stacked all-inputs-then-all-outputs; within each block the
layout is time-major with channels innermost.
"""

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .densemath import as_matrix, rank
from .errors import InvalidInputError, NotObservableError

AERIAL = 0
GROUND = 1

PE_RTOL = 1e-8


def as_sequence(seq, name="sequence"):
    """Coerce a scalar or vector sequence to a finite ``(T, channels)`` array."""
    arr = np.asarray(seq, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise InvalidInputError(f"{name} must be 1-D or 2-D, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite samples")
    return arr


@dataclass
class IOTrajectory:
    """Paired input/output samples on a uniform time grid.

    ``phase`` is an optional per-sample tag (``AERIAL`` or ``GROUND``).
    """

    dt: float
    u: np.ndarray
    y: np.ndarray
    phase: Optional[np.ndarray] = None
    episode_id: Optional[np.ndarray] = None

    def __post_init__(self):
        self.u = as_sequence(self.u, "u")
        self.y = as_sequence(self.y, "y")
        if not self.dt > 0:
            raise InvalidInputError(f"dt must be positive, got {self.dt}")
        if self.u.shape[0] != self.y.shape[0] or self.u.shape[0] < 1:
            raise InvalidInputError(
                f"u and y must share a length >= 1, got {self.u.shape[0]} "
                f"and {self.y.shape[0]}")
        if self.phase is not None:
            self.phase = np.asarray(self.phase, dtype=int).reshape(-1)
            if self.phase.size != len(self):
                raise InvalidInputError("phase tags must match trajectory length")
            if not np.all(np.isin(self.phase, (AERIAL, GROUND))):
                raise InvalidInputError("phase tags must be 0 (aerial) or 1 (ground)")
        if self.episode_id is not None:
            self.episode_id = np.asarray(self.episode_id, dtype=int).reshape(-1)
            if self.episode_id.size != len(self):
                raise InvalidInputError("episode ids must match trajectory length")

    def __len__(self):
        return self.u.shape[0]

    @property
    def m(self):
        return self.u.shape[1]

    @property
    def p(self):
        return self.y.shape[1]

    def window(self, start, stop):
        """Sub-trajectory of samples ``start:stop``."""
        sl = slice(start, stop)
        return IOTrajectory(
            self.dt, self.u[sl].copy(), self.y[sl].copy(),
            None if self.phase is None else self.phase[sl].copy(),
            None if self.episode_id is None else self.episode_id[sl].copy())

    def stacked(self):
        """Joint vector ``[u_0..u_{T-1}; y_0..y_{T-1}]``."""
        return np.concatenate([self.u.reshape(-1), self.y.reshape(-1)])


@dataclass(frozen=True)
class HankelSet:
    """Past/future row blocks of depth-``T_ini + T_f`` input and output Hankels."""

    U_p: np.ndarray
    Y_p: np.ndarray
    U_f: np.ndarray
    Y_f: np.ndarray
    T_ini: int
    T_f: int
    m: int
    p: int
    n_assumed: int = 0
    provenance: tuple = field(default=())

    def __post_init__(self):
        cols = self.U_p.shape[1]
        expect = {
            "U_p": (self.m * self.T_ini, self.U_p),
            "U_f": (self.m * self.T_f, self.U_f),
            "Y_p": (self.p * self.T_ini, self.Y_p),
            "Y_f": (self.p * self.T_f, self.Y_f),
        }
        for name, (rows, mat) in expect.items():
            if mat.shape != (rows, cols):
                raise InvalidInputError(
                    f"{name} has shape {mat.shape}, expected {(rows, cols)}")
            mat.setflags(write=False)

    @property
    def L(self):
        return self.T_ini + self.T_f

    @property
    def cols(self):
        return self.U_p.shape[1]

    @property
    def H_u(self):
        return np.vstack([self.U_p, self.U_f])

    @property
    def H_y(self):
        return np.vstack([self.Y_p, self.Y_f])

    def stacked(self):
        """``[H_L(u); H_L(y)]`` in joint-vector row order."""
        return np.vstack([self.U_p, self.U_f, self.Y_p, self.Y_f])


@dataclass
class LTISystem:
    """Discrete-time state-space model ``x+ = Ax + Bu, y = Cx + Du``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: Optional[np.ndarray] = None

    def __post_init__(self):
        self.A = as_matrix(self.A, "A")
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise InvalidInputError("A must be square")
        self.B = np.asarray(self.B, dtype=float).reshape(n, -1)
        self.C = np.asarray(self.C, dtype=float).reshape(-1, n)
        if self.D is None:
            self.D = np.zeros((self.C.shape[0], self.B.shape[1]))
        self.D = np.asarray(self.D, dtype=float).reshape(self.C.shape[0],
                                                         self.B.shape[1])
        for name in "BCD":
            if not np.all(np.isfinite(getattr(self, name))):
                raise InvalidInputError(f"{name} contains non-finite entries")

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def p(self):
        return self.C.shape[0]


def hankel(seq, L):
    """Block-Hankel matrix of depth ``L``; column ``j`` is ``seq[j:j+L]`` flattened."""
    X = as_sequence(seq)
    T, c = X.shape
    if not 1 <= L <= T:
        raise InvalidInputError(f"need 1 <= L <= T, got L={L}, T={T}")
    windows = np.lib.stride_tricks.sliding_window_view(X, (L, c))[:, 0]
    return np.ascontiguousarray(windows.reshape(T - L + 1, L * c).T)


def pe_order(seq, L, rtol=PE_RTOL):
    """True iff ``seq`` is persistently exciting of order ``L``."""
    H = hankel(seq, L)
    return rank(H, rtol) == H.shape[0]


def max_pe_order(seq, rtol=PE_RTOL, limit=None):
    """Largest ``L`` for which ``seq`` is persistently exciting (0 if none).

    Gallops upward by doubling, then bisects, so the cost is dominated by
    Hankel matrices near the answer rather than near ``T / 2``.
    """
    X = as_sequence(seq)
    T, c = X.shape
    # full row rank needs c * L <= T - L + 1
    top = (T + 1) // (c + 1)
    if limit is not None:
        top = min(top, limit)
    if top < 1 or not pe_order(X, 1, rtol):
        return 0
    lo, step = 1, 1
    while lo + step <= top and pe_order(X, lo + step, rtol):
        lo += step
        step *= 2
    hi = min(lo + step, top + 1)  # first order known (or assumed) to fail
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if pe_order(X, mid, rtol):
            lo = mid
        else:
            hi = mid
    return lo


def partition(traj, T_ini, T_f, n_assumed=0, provenance=()):
    """Split the depth-``T_ini + T_f`` Hankels of ``traj`` into past/future blocks."""
    if T_ini < 0 or T_f < 0 or T_ini + T_f < 1:
        raise InvalidInputError(f"need T_ini, T_f >= 0 with T_ini + T_f >= 1, "
                                f"got {T_ini}, {T_f}")
    L = T_ini + T_f
    if len(traj) < L:
        raise InvalidInputError(
            f"trajectory of length {len(traj)} is shorter than L={L}")
    Hu = hankel(traj.u, L)
    Hy = hankel(traj.y, L)
    m, p = traj.m, traj.p
    return HankelSet(
        U_p=Hu[:m * T_ini], U_f=Hu[m * T_ini:],
        Y_p=Hy[:p * T_ini], Y_f=Hy[p * T_ini:],
        T_ini=T_ini, T_f=T_f, m=m, p=p, n_assumed=n_assumed,
        provenance=tuple(provenance))


def concat_columns(sets: Sequence[HankelSet]):
    """Column-wise concatenation of HankelSets that share dimensions."""
    if not sets:
        raise InvalidInputError("need at least one HankelSet")
    first = sets[0]
    key = (first.T_ini, first.T_f, first.m, first.p)
    for s in sets[1:]:
        if (s.T_ini, s.T_f, s.m, s.p) != key:
            raise InvalidInputError(
                f"HankelSet dimensions {(s.T_ini, s.T_f, s.m, s.p)} != {key}")
    if len(sets) == 1:
        return first
    prov = tuple(item for s in sets for item in s.provenance)
    return HankelSet(
        U_p=np.hstack([s.U_p for s in sets]), Y_p=np.hstack([s.Y_p for s in sets]),
        U_f=np.hstack([s.U_f for s in sets]), Y_f=np.hstack([s.Y_f for s in sets]),
        T_ini=first.T_ini, T_f=first.T_f, m=first.m, p=first.p,
        n_assumed=max(s.n_assumed for s in sets), provenance=prov)


def spans_trajectory(hset, traj, rcond=1e-10):
    """Least-squares residual of ``traj`` against the Hankel column space."""
    if len(traj) != hset.L or traj.m != hset.m or traj.p != hset.p:
        raise InvalidInputError(
            f"trajectory (T={len(traj)}, m={traj.m}, p={traj.p}) does not match "
            f"HankelSet (L={hset.L}, m={hset.m}, p={hset.p})")
    H = hset.stacked()
    w = traj.stacked()
    g = np.linalg.lstsq(H, w, rcond=rcond)[0]
    return float(np.linalg.norm(H @ g - w))


def observability(sys, k):
    """Stacked ``[C; CA; ...; CA^{k-1}]``."""
    blocks = []
    M = sys.C
    for _ in range(k):
        blocks.append(M)
        M = M @ sys.A
    return np.vstack(blocks)


def lag(sys, max_k=None):
    """Smallest ``k`` with ``rank(O_k) == n``."""
    max_k = sys.n if max_k is None else max_k
    for k in range(1, max_k + 1):
        if rank(observability(sys, k), PE_RTOL) == sys.n:
            return k
    raise NotObservableError(
        f"observability matrix never reaches rank {sys.n} for k <= {max_k}")


def toeplitz_response(sys, T_f):
    """Observability matrix and block-Toeplitz impulse response over ``T_f`` steps.

    A trajectory from state ``x_ini`` under inputs ``u`` satisfies
    ``y = O @ x_ini + T @ u``.
    """
    if T_f < 1:
        raise InvalidInputError(f"T_f must be >= 1, got {T_f}")
    n, m, p = sys.n, sys.m, sys.p
    markov = [sys.D]
    AkB = sys.B
    for _ in range(1, T_f):
        markov.append(sys.C @ AkB)
        AkB = sys.A @ AkB
    T = np.zeros((p * T_f, m * T_f))
    for i in range(T_f):
        for j in range(i + 1):
            T[i * p:(i + 1) * p, j * m:(j + 1) * m] = markov[i - j]
    return observability(sys, T_f), T


def simulate(sys, u, x0=None):
    """Simulate ``sys`` from ``x0`` under input sequence ``u``; returns ``(y, x_final)``."""
    U = as_sequence(u, "u")
    x = np.zeros(sys.n) if x0 is None else np.asarray(x0, dtype=float).copy()
    Y = np.empty((U.shape[0], sys.p))
    for k, uk in enumerate(U):
        Y[k] = sys.C @ x + sys.D @ uk
        x = sys.A @ x + sys.B @ uk
    return Y, x
