"""Offline linear predictor and the online reference-steering QPs.

The predictor ``G`` maps ``[u_ini; y_ini; u]`` to ``[y; sigma_y]``. It is the
minimum-norm solution of

    min ||g||^2 + w ||sigma_y||^2
    s.t. U_p g = u_ini,  Y_p g + sigma_y = y_ini,  U_f g = u

followed by ``y = Y_f g``. ``w = 1`` is the plain pseudo-inverse of the stacked
``[U_p 0; Y_p I; U_f 0]``; ``w = inf`` resolves the slack first and then the
minimum-norm ``g``, which is exact on noise-free data.
"""

import logging
import math
import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .behavior import HankelSet
from .densemath import QProblem, QSolution, SolverSettings, pinv, qp_solve, rank
from .errors import InvalidInputError, ParseError

log = logging.getLogger(__name__)

MAGIC = "REFSTEER-G v1"


@dataclass
class SteeringConfig:
    """Weights, horizons, and bounds of the steering problem.

    ``Q`` and ``R`` accept a scalar, a per-channel vector, or a
    ``(T_f, channels)`` array. Bounds are ``(channels, 2)`` arrays of
    ``[low, high]`` and may contain infinities.
    """

    T_ini: int = 20
    T_f: int = 15
    Q: object = 10.0
    R: object = 0.1
    lambda_sigma: float = 1e5
    lambda_g: float = 1e-3
    u_bounds: Optional[np.ndarray] = None
    y_bounds: Optional[np.ndarray] = None
    rcond: float = 1e-10
    slack_weight: float = 1.0
    input_penalty: str = "deviation"
    solver: SolverSettings = field(default_factory=SolverSettings)

    def __post_init__(self):
        if self.T_ini < 1 or self.T_f < 1:
            raise InvalidInputError("T_ini and T_f must be >= 1")
        if not self.lambda_sigma > 0 or self.lambda_g < 0:
            raise InvalidInputError("need lambda_sigma > 0 and lambda_g >= 0")
        if not self.slack_weight > 0:
            raise InvalidInputError("slack_weight must be positive")
        if self.input_penalty not in ("deviation", "absolute"):
            raise InvalidInputError(
                f"input_penalty must be 'deviation' or 'absolute', "
                f"got {self.input_penalty!r}")
        for name in ("Q", "R"):
            if np.any(np.asarray(getattr(self, name), dtype=float) < 0):
                raise InvalidInputError(f"{name} must be element-wise >= 0")

    @property
    def L(self):
        return self.T_ini + self.T_f

    def weights(self, name, channels):
        """Weight ``name`` expanded to a flat length ``T_f * channels`` vector."""
        W = np.asarray(getattr(self, name), dtype=float)
        if W.ndim == 0:
            W = np.full((self.T_f, channels), float(W))
        elif W.ndim == 1:
            W = np.broadcast_to(W, (self.T_f, channels))
        if W.shape != (self.T_f, channels):
            raise InvalidInputError(
                f"{name} has shape {W.shape}, expected ({self.T_f}, {channels})")
        return W.reshape(-1).copy()

    def bounds(self, name, channels):
        """Bounds ``name`` expanded to flat lower/upper vectors over the horizon."""
        B = getattr(self, name)
        if B is None:
            inf = np.full(self.T_f * channels, np.inf)
            return -inf, inf
        B = np.asarray(B, dtype=float).reshape(channels, 2)
        lo = np.tile(B[:, 0], self.T_f)
        hi = np.tile(B[:, 1], self.T_f)
        return lo, hi


@dataclass(frozen=True)
class Predictor:
    """Offline predictor ``[y; sigma_y] = G [u_ini; y_ini; u]``."""

    G: np.ndarray
    m: int
    p: int
    T_ini: int
    T_f: int
    rcond: float = 1e-10
    slack_weight: float = 1.0
    source: str = ""
    warnings: tuple = ()
    basis: Optional[np.ndarray] = None

    def __post_init__(self):
        rows = self.p * self.T_f + self.p * self.T_ini
        cols = self.m * self.T_ini + self.p * self.T_ini + self.m * self.T_f
        if self.G.shape != (rows, cols):
            raise InvalidInputError(
                f"G has shape {self.G.shape}, expected {(rows, cols)}")
        self.G.setflags(write=False)
        if self.basis is not None:
            if self.basis.ndim != 2 or self.basis.shape[0] != self.n_ini:
                raise InvalidInputError(
                    f"window basis has shape {self.basis.shape}, expected "
                    f"({self.n_ini}, r)")
            self.basis.setflags(write=False)

    @property
    def n_ini(self):
        return (self.m + self.p) * self.T_ini

    @property
    def G_y(self):
        return self.G[:self.p * self.T_f]

    @property
    def G_sigma(self):
        return self.G[self.p * self.T_f:]

    def window_basis(self):
        """``(U_p, Y_p)`` split of the stored basis, or None."""
        if self.basis is None:
            return None
        k = self.m * self.T_ini
        return self.basis[:k], self.basis[k:]

    def predict(self, u_ini, y_ini, u):
        """Predicted ``(y, sigma_y)`` as ``(T_f, p)`` and ``(T_ini, p)`` arrays."""
        b = np.concatenate([np.ravel(u_ini), np.ravel(y_ini), np.ravel(u)])
        if b.size != self.G.shape[1]:
            raise InvalidInputError(
                f"query has {b.size} entries, expected {self.G.shape[1]}")
        out = self.G @ b
        k = self.p * self.T_f
        return out[:k].reshape(self.T_f, self.p), out[k:].reshape(self.T_ini, self.p)


def build_predictor(hset: HankelSet, cfg: SteeringConfig, source="") -> Predictor:
    """Compute ``G`` from a HankelSet; rank deficiency is warned and recorded."""
    if (hset.T_ini, hset.T_f) != (cfg.T_ini, cfg.T_f):
        raise InvalidInputError(
            f"HankelSet horizons {(hset.T_ini, hset.T_f)} do not match config "
            f"{(cfg.T_ini, cfg.T_f)}")
    notes = []
    Hu = hset.H_u
    r_u = rank(Hu, 1e-8)
    if r_u < hset.m * hset.L:
        msg = (f"input data rank {r_u} < m*L = {hset.m * hset.L}; "
               f"predictor is not data-complete")
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
    if math.isinf(cfg.slack_weight):
        G = _exact_predictor(hset, cfg.rcond)
    else:
        G = _penalized_predictor(hset, cfg.slack_weight, cfg.rcond)
    return Predictor(G=G, m=hset.m, p=hset.p, T_ini=hset.T_ini, T_f=hset.T_f,
                     rcond=cfg.rcond, slack_weight=cfg.slack_weight,
                     source=source, warnings=tuple(notes))


def _penalized_predictor(hset, w, rcond):
    m, p, Ti, Tf = hset.m, hset.p, hset.T_ini, hset.T_f
    s = 1.0 / math.sqrt(w)
    N = hset.cols
    M = np.zeros((m * Ti + p * Ti + m * Tf, N + p * Ti))
    M[:m * Ti, :N] = hset.U_p
    M[m * Ti:m * Ti + p * Ti, :N] = hset.Y_p
    M[m * Ti:m * Ti + p * Ti, N:] = s * np.eye(p * Ti)
    M[m * Ti + p * Ti:, :N] = hset.U_f
    Mp = pinv(M, rcond)
    return np.vstack([hset.Y_f @ Mp[:N], s * Mp[N:]])


def _exact_predictor(hset, rcond):
    m, p, Ti, Tf = hset.m, hset.p, hset.T_ini, hset.T_f
    # g lives in the row space of [U_p; U_f; Y_p]; work in those coordinates.
    Z = np.vstack([hset.U_p, hset.U_f, hset.Y_p])
    _, sz, Vt = np.linalg.svd(Z, full_matrices=False)
    keep = sz > rcond * sz[0]
    V = Vt[keep].T
    Du = np.vstack([hset.U_p, hset.U_f]) @ V
    Yp = hset.Y_p @ V
    Yf = hset.Y_f @ V
    k = V.shape[1]

    Uu, su, Vut = np.linalg.svd(Du, full_matrices=True)
    r = int(np.count_nonzero(su > rcond * su[0])) if su.size else 0
    Du_pinv = (Vut[:r].T / su[:r]) @ Uu[:, :r].T
    Nd = Vut[r:].T
    if Nd.shape[1]:
        YN_pinv = pinv(Yp @ Nd, rcond) if np.any(Yp @ Nd) else np.zeros((Nd.shape[1], p * Ti))
        corr = Nd @ YN_pinv
    else:
        corr = np.zeros((k, p * Ti))
    W_ubar = Du_pinv - corr @ Yp @ Du_pinv
    W_yini = corr
    cols_ini = W_ubar[:, :m * Ti]
    cols_fut = W_ubar[:, m * Ti:]
    Wmap = np.hstack([cols_ini, W_yini, cols_fut])
    Gy = Yf @ Wmap
    sel_yini = np.zeros((p * Ti, Wmap.shape[1]))
    sel_yini[:, m * Ti:m * Ti + p * Ti] = np.eye(p * Ti)
    Gs = sel_yini - Yp @ Wmap
    return np.vstack([Gy, Gs])


def save_predictor(pred: Predictor, path):
    """Write ``pred`` in the versioned flat text format."""
    rows, cols = pred.G.shape
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(MAGIC + "\n")
        fh.write(f"m = {pred.m}\np = {pred.p}\nT_ini = {pred.T_ini}\n"
                 f"T_f = {pred.T_f}\nrcond = {pred.rcond!r}\n"
                 f"slack_weight = {pred.slack_weight!r}\n"
                 f"source = {pred.source}\nrows = {rows}\ncols = {cols}\n")
        if pred.basis is not None:
            fh.write(f"basis_cols = {pred.basis.shape[1]}\n")
        for note in pred.warnings:
            fh.write(f"warning = {note}\n")
        fh.write("data\n")
        _write_rows(fh, pred.G)
        if pred.basis is not None:
            fh.write("basis\n")
            _write_rows(fh, pred.basis)


def _write_rows(fh, A):
    for row in A:
        fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def _read_rows(lines, first, rows, cols):
    """Parse ``rows`` comma-separated rows starting at index ``first``."""
    if len(lines) < first + rows:
        raise ParseError(f"expected {rows} data rows, found {len(lines) - first}",
                         first + 1)
    A = np.empty((rows, cols))
    for r in range(rows):
        vals = lines[first + r].split(",")
        if len(vals) != cols:
            raise ParseError(f"row has {len(vals)} entries, expected {cols}",
                             first + r + 1)
        try:
            A[r] = [float(v) for v in vals]
        except ValueError:
            raise ParseError("unparsable number", first + r + 1) from None
    return A


def load_predictor(path) -> Predictor:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != MAGIC:
        raise ParseError(f"missing header {MAGIC!r}", 1)
    meta, notes = {}, []
    i = 1
    while i < len(lines) and lines[i].strip() != "data":
        key, sep, val = lines[i].partition("=")
        if not sep:
            raise ParseError(f"expected 'key = value', got {lines[i]!r}", i + 1)
        key, val = key.strip(), val.strip()
        if key == "warning":
            notes.append(val)
        else:
            meta[key] = val
        i += 1
    try:
        rows, cols = int(meta["rows"]), int(meta["cols"])
        dims = {k: int(meta[k]) for k in ("m", "p", "T_ini", "T_f")}
        rcond, w = float(meta["rcond"]), float(meta["slack_weight"])
    except KeyError as exc:
        raise ParseError(f"missing header field {exc.args[0]!r}") from None
    G = _read_rows(lines, i + 1, rows, cols)
    end = i + 1 + rows
    basis = None
    if "basis_cols" in meta:
        if end >= len(lines) or lines[end].strip() != "basis":
            raise ParseError("expected 'basis' block", end + 1)
        n_ini = (dims["m"] + dims["p"]) * dims["T_ini"]
        basis = _read_rows(lines, end + 1, n_ini, int(meta["basis_cols"]))
        end += 1 + n_ini
    if any(line.strip() for line in lines[end:]):
        raise ParseError("trailing content after data", end + 1)
    return Predictor(G=G, rcond=rcond, slack_weight=w, source=meta.get("source", ""),
                     warnings=tuple(notes), basis=basis, **dims)


class ControllerState:
    """Ring buffers of the last ``T_ini`` applied inputs and measured outputs."""

    def __init__(self, T_ini, m, p):
        self.T_ini, self.m, self.p = T_ini, m, p
        self.u_buf = deque(maxlen=T_ini)
        self.y_buf = deque(maxlen=T_ini)
        self.warm: Optional[QSolution] = None
        self.tick = 0

    @property
    def primed(self):
        return len(self.u_buf) == self.T_ini

    def u_ini(self):
        return np.array(self.u_buf)

    def y_ini(self):
        return np.array(self.y_buf)

    def reset(self):
        self.u_buf.clear()
        self.y_buf.clear()
        self.warm = None


def controller_tick(state: ControllerState, measurement, applied_input):
    """Push the newest ``(applied_input, measurement)`` pair; oldest is evicted."""
    y = np.asarray(measurement, dtype=float).reshape(-1)
    u = np.asarray(applied_input, dtype=float).reshape(-1)
    if y.size != state.p or u.size != state.m:
        raise InvalidInputError(
            f"sample sizes (u={u.size}, y={y.size}) do not match "
            f"(m={state.m}, p={state.p})")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(u))):
        raise InvalidInputError("non-finite sample")
    state.u_buf.append(u)
    state.y_buf.append(y)
    state.tick += 1
    return state


@dataclass
class SteerResult:
    u: np.ndarray
    y: np.ndarray
    sigma: np.ndarray
    status: str
    iterations: int
    fallback: bool = False


def _nominal(y_des, u_nom, m, p, T_f):
    if u_nom is not None:
        return np.asarray(u_nom, dtype=float).reshape(T_f, m)
    if m != p:
        raise InvalidInputError("u_nom is required when m != p")
    return np.asarray(y_des, dtype=float).reshape(T_f, p)


def _shift(v, T_f, ch):
    """Advance a horizon-major vector by one step, repeating the last step."""
    V = v.reshape(T_f, ch)
    return np.vstack([V[1:], V[-1:]]).reshape(-1)


def steer_flying(pred: Predictor, state: ControllerState, y_des, cfg: SteeringConfig,
                 u_nom=None, u_ini=None, y_ini=None) -> SteerResult:
    """Solve the reduced steering QP for the full horizon of references.

    ``u_ini``/``y_ini`` override the buffers (used with artificial samples).
    On solver infeasibility the nominal reference is passed through.
    """
    if u_ini is None and not state.primed:
        raise InvalidInputError("controller buffers are not primed")
    m, p, Tf, Ti = pred.m, pred.p, pred.T_f, pred.T_ini
    if (cfg.T_ini, cfg.T_f) != (Ti, Tf):
        raise InvalidInputError("config horizons do not match predictor")
    y_des = np.asarray(y_des, dtype=float).reshape(-1)
    if y_des.size != p * Tf:
        raise InvalidInputError(f"y_des has {y_des.size} entries, expected {p * Tf}")
    u_ref = _nominal(y_des, u_nom, m, p, Tf).reshape(-1)
    ui = state.u_ini() if u_ini is None else np.asarray(u_ini, dtype=float)
    yi = state.y_ini() if y_ini is None else np.asarray(y_ini, dtype=float)
    b_ini = np.concatenate([ui.reshape(-1), yi.reshape(-1)])

    k = pred.n_ini
    Gy, Gs = pred.G_y, pred.G_sigma
    c_y, Gyu = Gy[:, :k] @ b_ini, Gy[:, k:]
    c_s, Gsu = Gs[:, :k] @ b_ini, Gs[:, k:]
    Qw = cfg.weights("Q", p)
    Rw = cfg.weights("R", m)
    anchor = u_ref if cfg.input_penalty == "deviation" else np.zeros_like(u_ref)
    lam = cfg.lambda_sigma
    ulo, uhi = cfg.bounds("u_bounds", m)
    ylo, yhi = cfg.bounds("y_bounds", p)
    nu = m * Tf
    with_y = bool(np.any(np.isfinite(ylo)) or np.any(np.isfinite(yhi)))

    Hs = lam * Gsu.T @ Gsu
    if with_y:
        ny = p * Tf
        P = np.zeros((nu + ny, nu + ny))
        P[:nu, :nu] = 2.0 * (np.diag(Rw) + Hs)
        P[nu:, nu:] = 2.0 * np.diag(Qw)
        q = np.concatenate([2.0 * (-Rw * anchor + lam * Gsu.T @ c_s),
                            -2.0 * Qw * y_des])
        A_eq = np.hstack([-Gyu, np.eye(ny)])
        prob = QProblem(P, q, A_eq, c_y, np.concatenate([ulo, ylo]),
                        np.concatenate([uhi, yhi]))
    else:
        P = 2.0 * (Gyu.T @ (Qw[:, None] * Gyu) + np.diag(Rw) + Hs)
        q = 2.0 * (Gyu.T @ (Qw * (c_y - y_des)) - Rw * anchor + lam * Gsu.T @ c_s)
        prob = QProblem(P, q, lower=ulo, upper=uhi)

    warm = _shifted_warm(state.warm, prob, Tf, m, p, with_y)
    sol = qp_solve(prob, warm, cfg.solver)
    if sol.status == "infeasible":
        log.warning("steering QP infeasible at tick %d; passing nominal reference "
                    "through", state.tick)
        state.warm = None
        u = u_ref.reshape(Tf, m)
        y, s = pred.predict(ui, yi, u)
        return SteerResult(u=u, y=y, sigma=s, status=sol.status,
                           iterations=sol.iterations, fallback=True)
    state.warm = sol
    u = sol.x[:nu]
    y = c_y + Gyu @ u
    s = c_s + Gsu @ u
    return SteerResult(u=u.reshape(Tf, m), y=y.reshape(Tf, p),
                       sigma=s.reshape(Ti, p), status=sol.status,
                       iterations=sol.iterations)


def _shifted_warm(prev, prob, Tf, m, p, with_y):
    if prev is None or prev.x is None or prev.x.size != prob.n:
        return None
    nu = m * Tf
    x = prev.x.copy()
    x[:nu] = _shift(x[:nu], Tf, m)
    if with_y:
        x[nu:] = _shift(x[nu:], Tf, p)
    return QSolution(x=x, status=prev.status, iterations=0,
                     primal_residual=prev.primal_residual,
                     dual_residual=prev.dual_residual, y=None, z=None,
                     rho=prev.rho)


def steer_hopping(pred: Predictor, state: ControllerState, y_des, cfg: SteeringConfig,
                  u_ini, y_ini, u_nom=None) -> SteerResult:
    """Steering QP whose initial window holds real aerial plus artificial ground samples.

    Identical in structure to :func:`steer_flying`; ``u_ini``/``y_ini`` are the
    concatenated descend/ground/ascend window produced by
    :func:`refsteer.hybridio.fill_window`.
    """
    return steer_flying(pred, state, y_des, cfg, u_nom=u_nom, u_ini=u_ini, y_ini=y_ini)


@dataclass
class FullSolution:
    u: np.ndarray
    y: np.ndarray
    g: np.ndarray
    sigma: np.ndarray
    status: str
    iterations: int


def solve_full_ddpc(hset: HankelSet, state: ControllerState, y_des, cfg: SteeringConfig,
                    u_nom=None, u_ini=None, y_ini=None) -> FullSolution:
    """Full data-driven predictive control QP over ``(g, u, y, sigma_y)``.

    Reference formulation used to cross-check the reduced predictor.
    """
    m, p, Ti, Tf = hset.m, hset.p, hset.T_ini, hset.T_f
    if (cfg.T_ini, cfg.T_f) != (Ti, Tf):
        raise InvalidInputError("config horizons do not match HankelSet")
    if u_ini is None and not state.primed:
        raise InvalidInputError("controller buffers are not primed")
    y_des = np.asarray(y_des, dtype=float).reshape(-1)
    if y_des.size != p * Tf:
        raise InvalidInputError(f"y_des has {y_des.size} entries, expected {p * Tf}")
    u_ref = _nominal(y_des, u_nom, m, p, Tf).reshape(-1)
    ui = (state.u_ini() if u_ini is None else np.asarray(u_ini, dtype=float)).reshape(-1)
    yi = (state.y_ini() if y_ini is None else np.asarray(y_ini, dtype=float)).reshape(-1)

    N = hset.cols
    nu, ny, ns = m * Tf, p * Tf, p * Ti
    n = N + nu + ny + ns
    Qw = cfg.weights("Q", p)
    Rw = cfg.weights("R", m)
    anchor = u_ref if cfg.input_penalty == "deviation" else np.zeros_like(u_ref)
    diag = np.concatenate([np.full(N, cfg.lambda_g), Rw, Qw,
                           np.full(ns, cfg.lambda_sigma)])
    P = 2.0 * np.diag(diag)
    q = np.concatenate([np.zeros(N), -2.0 * Rw * anchor, -2.0 * Qw * y_des,
                        np.zeros(ns)])
    iu, iy, isg = N, N + nu, N + nu + ny
    A = np.zeros((m * Ti + p * Ti + nu + ny, n))
    r = 0
    A[r:r + m * Ti, :N] = hset.U_p
    r += m * Ti
    A[r:r + p * Ti, :N] = hset.Y_p
    A[r:r + p * Ti, isg:] = np.eye(ns)
    r += p * Ti
    A[r:r + nu, :N] = hset.U_f
    A[r:r + nu, iu:iy] = -np.eye(nu)
    r += nu
    A[r:r + ny, :N] = hset.Y_f
    A[r:r + ny, iy:isg] = -np.eye(ny)
    b = np.concatenate([ui, yi, np.zeros(nu + ny)])
    ulo, uhi = cfg.bounds("u_bounds", m)
    ylo, yhi = cfg.bounds("y_bounds", p)
    lower = np.concatenate([np.full(N, -np.inf), ulo, ylo, np.full(ns, -np.inf)])
    upper = np.concatenate([np.full(N, np.inf), uhi, yhi, np.full(ns, np.inf)])
    sol = qp_solve(QProblem(P, q, A, b, lower, upper), None, cfg.solver)
    x = sol.x
    if sol.status == "infeasible":
        log.warning("full DDPC QP infeasible; passing nominal reference through")
        return FullSolution(u=u_ref.reshape(Tf, m), y=np.full((Tf, p), np.nan),
                            g=np.zeros(N), sigma=np.zeros((Ti, p)),
                            status=sol.status, iterations=sol.iterations)
    return FullSolution(u=x[iu:iy].reshape(Tf, m), y=x[iy:isg].reshape(Tf, p),
                        g=x[:N], sigma=x[isg:].reshape(Ti, p), status=sol.status,
                        iterations=sol.iterations)
