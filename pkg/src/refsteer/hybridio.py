"""Artificial ground-phase IO for hopping data.

A hop's ground samples come from spring-leg dynamics that the aerial
predictor must never see. Each ground window is replaced by a least-norm
combination of aerial Hankel columns that agrees with the recorded samples
on both sides, which leaves a trajectory that looks purely aerial.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .behavior import AERIAL, GROUND, IOTrajectory, concat_columns, partition
from .densemath import rank
from .errors import FillFailureError, InvalidInputError

log = logging.getLogger(__name__)

DEFAULT_T_D = 10
DEFAULT_T_A = 10


@dataclass
class HopEpisode:
    """Descend/ground/ascend windows of one hop; ``ground`` is None when empty."""

    descend: IOTrajectory
    ground: Optional[IOTrajectory]
    ascend: IOTrajectory
    ground_len: int
    episode_id: int
    start: int = 0

    @property
    def T_d(self):
        return len(self.descend)

    @property
    def T_a(self):
        return len(self.ascend)

    def __len__(self):
        return self.T_d + self.ground_len + self.T_a


@dataclass
class FilledEpisode:
    episode_id: int
    traj: IOTrajectory
    fill_residual: float
    start: int = 0
    ground: Optional[slice] = None


def aerial_hankel(trajs, depth, label="aerial"):
    """Depth-``depth`` Hankel columns from windows that are aerial throughout.

    Returned as a HankelSet with ``T_ini = depth`` and ``T_f = 0``; the
    provenance records ``(label, trajectory index, start, stop)`` for each
    contiguous aerial run that contributed.
    """
    if isinstance(trajs, IOTrajectory):
        trajs = [trajs]
    sets = []
    for i, tr in enumerate(trajs):
        phase = np.zeros(len(tr), dtype=int) if tr.phase is None else tr.phase
        for start, stop in _runs(phase == AERIAL):
            if stop - start >= depth:
                sets.append(partition(tr.window(start, stop), depth, 0,
                                      provenance=[(label, i, start, stop)]))
    if not sets:
        raise InvalidInputError(f"no aerial window of length {depth} in the data")
    return concat_columns(sets)


def _runs(mask):
    """``(start, stop)`` pairs of the True runs in a boolean array."""
    padded = np.concatenate([[False], np.asarray(mask, dtype=bool), [False]])
    edges = np.flatnonzero(np.diff(padded.astype(int)))
    return list(zip(edges[::2], edges[1::2]))


def segment_episodes(log_traj, T_d=DEFAULT_T_D, T_a=DEFAULT_T_A, ground_len=None):
    """One HopEpisode per ground interval with enough aerial margin on each side.

    When ``ground_len`` is given, longer ground intervals are truncated and
    shorter ones padded with their last sample so every episode has the same
    length.
    """
    if log_traj.phase is None:
        raise InvalidInputError("segment_episodes needs phase tags")
    if T_d < 1 or T_a < 1:
        raise InvalidInputError("T_d and T_a must be >= 1")
    phase = log_traj.phase
    N = len(log_traj)
    episodes = []
    for k, (s, e) in enumerate(_runs(phase == GROUND)):
        eid = int(log_traj.episode_id[s]) if log_traj.episode_id is not None else k
        if s - T_d < 0 or np.any(phase[s - T_d:s] != AERIAL):
            log.info("episode %d skipped: fewer than %d aerial samples before touchdown",
                     eid, T_d)
            continue
        if e + T_a > N or np.any(phase[e:e + T_a] != AERIAL):
            log.info("episode %d skipped: fewer than %d aerial samples after liftoff",
                     eid, T_a)
            continue
        ground = log_traj.window(s, e)
        if ground_len is not None and len(ground) != ground_len:
            log.warning("episode %d: ground length %d resampled to %d",
                        eid, len(ground), ground_len)
            idx = np.minimum(np.arange(ground_len), len(ground) - 1)
            ground = IOTrajectory(ground.dt, ground.u[idx], ground.y[idx],
                                  ground.phase[idx], None if ground.episode_id is None
                                  else ground.episode_id[idx])
        episodes.append(HopEpisode(
            descend=log_traj.window(s - T_d, s), ground=ground,
            ascend=log_traj.window(e, e + T_a), ground_len=len(ground),
            episode_id=eid, start=s - T_d))
    return episodes


def _check_aerial_purity(hset):
    for item in hset.provenance:
        if not (isinstance(item, tuple) and item and item[0] == "aerial"):
            raise InvalidInputError(
                f"fill data must come from aerial samples only, got provenance {item!r}")


def masked_fill(U, Y, u, y, free_u, free_y, rcond=None):
    """Least-norm ``g`` with ``[U; Y] g`` matching ``(u, y)`` on the fixed rows.

    ``free_u``/``free_y`` are per-sample boolean masks. Returns the completed
    ``(u, y)`` (fixed samples untouched) and the residual norm on fixed rows.
    """
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    T, m = u.shape
    p = y.shape[1]
    fix_u = np.repeat(~np.asarray(free_u, dtype=bool), m)
    fix_y = np.repeat(~np.asarray(free_y, dtype=bool), p)
    H = np.vstack([U[fix_u], Y[fix_y]])
    w = np.concatenate([u.reshape(-1)[fix_u], y.reshape(-1)[fix_y]])
    g = np.linalg.lstsq(H, w, rcond=rcond)[0]
    resid = float(np.linalg.norm(H @ g - w))
    u_out = u.copy()
    y_out = y.copy()
    u_out.reshape(-1)[~fix_u] = U[~fix_u] @ g
    y_out.reshape(-1)[~fix_y] = Y[~fix_y] @ g
    return u_out, y_out, resid


def fill_ground(ep, aerial_set, anchor_inputs=False, max_residual=np.inf,
                rcond=None):
    """Replace the ground samples of ``ep`` with aerial-consistent ones.

    By default both ground inputs and outputs are free. With
    ``anchor_inputs`` the recorded ground inputs are kept and only the
    outputs are generated.
    """
    D = len(ep)
    if aerial_set.T_ini != D:
        raise InvalidInputError(
            f"aerial set depth {aerial_set.T_ini} does not match episode length {D}")
    if aerial_set.m != ep.descend.m or aerial_set.p != ep.descend.p:
        raise InvalidInputError("aerial set channel counts do not match the episode")
    _check_aerial_purity(aerial_set)
    if rank(aerial_set.U_p, 1e-8) < aerial_set.U_p.shape[0]:
        log.warning("aerial input Hankel is rank deficient; fill may be ill-posed")

    G = ep.ground_len
    mid = [] if G == 0 else [ep.ground]
    u = np.vstack([s.u for s in [ep.descend, *mid, ep.ascend]])
    y = np.vstack([s.y for s in [ep.descend, *mid, ep.ascend]])
    free = np.zeros(D, dtype=bool)
    free[ep.T_d:ep.T_d + G] = True
    if G == 0:
        u_f, y_f, resid = u, y, 0.0
    else:
        u_f, y_f, resid = masked_fill(aerial_set.U_p, aerial_set.Y_p, u, y,
                                      np.zeros(D, bool) if anchor_inputs else free,
                                      free, rcond=rcond)
    if resid > max_residual:
        raise FillFailureError(
            f"episode {ep.episode_id}: boundary data inconsistent with aerial "
            f"dynamics (residual {resid:.3g} > {max_residual:.3g})", resid)
    traj = IOTrajectory(ep.descend.dt, u_f, y_f, np.full(D, AERIAL),
                        np.full(D, ep.episode_id))
    return FilledEpisode(ep.episode_id, traj, resid, ep.start,
                         slice(ep.T_d, ep.T_d + G))


def compress_past(hset, rtol=1e-12):
    """Compact stand-in ``(U_p', Y_p')`` for the past rows of ``hset``.

    The least-norm fill only depends on the column space of ``[U_p; Y_p]``
    scaled by its singular values, so ``U S`` from a thin SVD gives identical
    fills with ``r`` columns instead of thousands.
    """
    Z = np.vstack([hset.U_p, hset.Y_p])
    Uz, s, _ = np.linalg.svd(Z, full_matrices=False)
    keep = s > rtol * s[0] if s.size else s.astype(bool)
    B = Uz[:, keep] * s[keep]
    k = hset.U_p.shape[0]
    return B[:k], B[k:]


def fill_window(u, y, phase, past, rcond=None):
    """Online variant: generate the ground-tagged samples of a length-``T_ini``
    window from past data.

    ``past`` is a HankelSet or a ``(U_p, Y_p)`` pair such as the output of
    :func:`compress_past`. Returns ``(u, y, residual)``; windows without
    ground samples pass through.
    """
    phase = np.asarray(phase, dtype=int)
    free = phase == GROUND
    if not free.any():
        return np.asarray(u, dtype=float), np.asarray(y, dtype=float), 0.0
    if free.all():
        raise InvalidInputError("window holds no aerial samples to anchor the fill")
    U_p, Y_p = (past.U_p, past.Y_p) if hasattr(past, "U_p") else past
    if U_p.shape[0] != np.size(u) or Y_p.shape[0] != np.size(y):
        raise InvalidInputError("window length does not match the past data depth")
    return masked_fill(U_p, Y_p, u, y, free, free, rcond=rcond)


def stitch(log_traj, filled):
    """Splice filled ground windows back into the log and return the longest
    continuous stretches that contain no unfilled ground sample.

    Consecutive hops share real aerial samples, so the stretches are
    aerial-consistent trajectories many hops long. Returns FilledEpisodes
    keyed by their first hop's id.
    """
    if log_traj.phase is None:
        raise InvalidInputError("stitch needs phase tags")
    u = log_traj.u.copy()
    y = log_traj.y.copy()
    clean = log_traj.phase == AERIAL
    resid = {}
    for fe in sorted(filled, key=lambda f: f.start):
        gs = fe.ground
        lo, hi = fe.start + gs.start, fe.start + gs.stop
        if hi - lo != int(np.count_nonzero(log_traj.phase[lo:hi] == GROUND)):
            raise InvalidInputError(
                f"episode {fe.episode_id} does not line up with the log's ground tags")
        u[lo:hi] = fe.traj.u[gs]
        y[lo:hi] = fe.traj.y[gs]
        clean[lo:hi] = True
        resid[lo] = (fe.episode_id, fe.fill_residual)
    out = []
    for start, stop in _runs(clean):
        inside = [v for k, v in resid.items() if start <= k < stop]
        if not inside:
            continue
        eid = min(e for e, _ in inside)
        n = stop - start
        traj = IOTrajectory(log_traj.dt, u[start:stop], y[start:stop],
                            np.full(n, AERIAL), np.full(n, eid))
        out.append(FilledEpisode(eid, traj, max(r for _, r in inside), int(start)))
    return out


def build_hop_hankel(filled, T_ini, T_f):
    """Column-wise Hankel concatenation over filled trajectories, ordered by id."""
    L = T_ini + T_f
    sets = []
    for fe in sorted(filled, key=lambda f: f.episode_id):
        if len(fe.traj) < L:
            log.warning("episode %d (length %d) shorter than L=%d; excluded",
                        fe.episode_id, len(fe.traj), L)
            continue
        sets.append(partition(fe.traj, T_ini, T_f,
                              provenance=[("filled", fe.episode_id)]))
    if not sets:
        raise InvalidInputError(f"no filled trajectory reaches length L={L}")
    return concat_columns(sets)


def hop_hankel_from_log(log_traj, aerial_trajs, T_ini, T_f, T_d=DEFAULT_T_D,
                        T_a=DEFAULT_T_A, max_residual=np.inf):
    """Segment, fill, stitch and assemble H_G from one or more hopping logs.

    ``aerial_trajs`` supply the aerial-only data used for filling. Returns
    ``(hset, filled_episodes, stitched)``.
    """
    logs = [log_traj] if isinstance(log_traj, IOTrajectory) else list(log_traj)
    cache = {}
    all_filled, stitched = [], []
    for lg in logs:
        filled = []
        for ep in segment_episodes(lg, T_d, T_a):
            depth = len(ep)
            if depth not in cache:
                cache[depth] = aerial_hankel(aerial_trajs, depth)
            try:
                filled.append(fill_ground(ep, cache[depth], max_residual=max_residual))
            except FillFailureError as exc:
                log.warning("%s", exc)
        all_filled.extend(filled)
        stitched.extend(stitch(lg, filled))
    return build_hop_hankel(stitched, T_ini, T_f), all_filled, stitched
