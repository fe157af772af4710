"""Excitation signals, closed-loop data collection, and the dataset file format."""

import logging
import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .behavior import AERIAL, IOTrajectory
from .errors import InvalidInputError, ParseError, PlantFault

log = logging.getLogger(__name__)

_MASK64 = (1 << 64) - 1


class XorShift64Star:
    """xorshift64* generator; the state is seeded through splitmix64 so any
    64-bit seed (including 0) gives a valid nonzero state."""

    def __init__(self, seed):
        z = (int(seed) + 0x9E3779B97F4A7C15) & _MASK64
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        self.state = (z ^ (z >> 31)) or 0x9E3779B97F4A7C15

    def next(self):
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & _MASK64
        x ^= x >> 27
        self.state = x
        return (x * 0x2545F4914F6CDD1D) & _MASK64

    def bit(self):
        return self.next() >> 63

    def uniform(self):
        return (self.next() >> 11) * (1.0 / (1 << 53))


@dataclass
class PRBSConfig:
    amplitude: object = 0.01
    bit_hold: int = 1
    seed: int = 0
    length: int = 0

    def __post_init__(self):
        amp = np.atleast_1d(np.asarray(self.amplitude, dtype=float))
        if np.any(amp < 0) or not np.all(np.isfinite(amp)):
            raise InvalidInputError("PRBS amplitude must be finite and >= 0")
        if int(self.bit_hold) < 1:
            raise InvalidInputError("bit_hold must be >= 1")
        if int(self.length) < 0:
            raise InvalidInputError("length must be >= 0")
        self.amplitude = amp
        self.bit_hold = int(self.bit_hold)
        self.length = int(self.length)


def prbs(cfg, channels=None):
    """``(length, channels)`` array of independent +/-amplitude binary sequences."""
    amp = cfg.amplitude
    if channels is None:
        channels = amp.size
    amp = np.broadcast_to(amp, (channels,))
    rng = XorShift64Star(cfg.seed)
    n_bits = -(-cfg.length // cfg.bit_hold)
    bits = np.array([[rng.bit() for _ in range(channels)] for _ in range(n_bits)],
                    dtype=float).reshape(n_bits, channels)
    levels = np.repeat(2.0 * bits - 1.0, cfg.bit_hold, axis=0)[:cfg.length]
    return levels * amp


@dataclass
class SmoothSweep:
    """Sum of three sinusoids per channel with seeded phases.

    Stands in for a human pilot's stick inputs: ``offset + sum_i a_i sin(2 pi
    f_i t + phi_i)`` with the amplitudes split evenly across components.
    """

    offset: np.ndarray
    amplitude: np.ndarray
    freqs: np.ndarray
    seed: int = 0
    phases: np.ndarray = field(init=False)

    def __post_init__(self):
        self.offset = np.asarray(self.offset, dtype=float).reshape(-1)
        c = self.offset.size
        self.amplitude = np.broadcast_to(
            np.asarray(self.amplitude, dtype=float), (c,)).copy()
        self.freqs = np.broadcast_to(np.asarray(self.freqs, dtype=float), (c, 3)).copy()
        rng = XorShift64Star(self.seed ^ 0x5EED)
        self.phases = np.array([[2.0 * math.pi * rng.uniform() for _ in range(3)]
                                for _ in range(c)])

    def __call__(self, t):
        waves = np.sin(2.0 * math.pi * self.freqs * t + self.phases)
        return self.offset + (self.amplitude / 3.0) * waves.sum(axis=1)


@dataclass
class Dataset:
    id: str
    traj: IOTrajectory
    params: dict = field(default_factory=dict)
    excitation: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    time: Optional[np.ndarray] = None

    @property
    def truncated(self):
        return str(self.meta.get("truncated", "0")) == "1"


def collect(rig, base_refs, prbs_cfg, duration, dataset_id="dataset",
            perturb_ground=False):
    """Run the nominal closed loop with ``base_refs(rig, t) + PRBS`` and log it.

    The logged input is exactly the reference handed to the inner loop. In
    the ground phase the PRBS is withheld unless ``perturb_ground`` is set.
    A plant fault truncates the log and flags the dataset.
    """
    ticks = int(round(duration / rig.dt))
    noise = prbs(PRBSConfig(prbs_cfg.amplitude, prbs_cfg.bit_hold, prbs_cfg.seed,
                            ticks), rig.m)
    rig.reset()
    t_log, U, Y, ph, ep = [], [], [], [], []
    fault = None
    for k in range(ticks):
        t = rig.time
        y = rig.measure()
        phase = rig.phase
        u = np.asarray(base_refs(rig, t), dtype=float).reshape(-1)
        if phase == AERIAL or perturb_ground:
            u = u + noise[k]
        t_log.append(t)
        U.append(u)
        Y.append(y)
        ph.append(phase)
        ep.append(rig.episode)
        try:
            rig.apply(u)
        except PlantFault as exc:
            fault = exc
            log.warning("collection stopped by plant fault at t=%.3f: %s", exc.time, exc)
            break
    if not U:
        raise InvalidInputError("collection produced no samples")
    traj = IOTrajectory(rig.dt, np.array(U), np.array(Y), np.array(ph), np.array(ep))
    meta = {"samples": len(traj), "duration": duration, "truncated": int(fault is not None),
            "saturations": rig.saturations}
    if fault is not None:
        meta["fault"] = str(fault)
    exc_cfg = {"prbs.amplitude": " ".join(repr(float(a)) for a in prbs_cfg.amplitude),
               "prbs.bit_hold": prbs_cfg.bit_hold, "prbs.seed": prbs_cfg.seed}
    return Dataset(dataset_id, traj, rig.snapshot(), exc_cfg, meta, np.array(t_log))


def _fmt(x):
    return "%.17g" % x


def meta_path(path):
    return str(path) + ".meta"


def save_dataset(ds, path):
    """Write the CSV and its ``.meta`` sidecar."""
    tr = ds.traj
    m, p = tr.m, tr.p
    header = ["t"] + [f"u{i + 1}" for i in range(m)] + [f"y{i + 1}" for i in range(p)] \
        + ["phase", "episode_id"]
    phase = tr.phase if tr.phase is not None else np.zeros(len(tr), dtype=int)
    eid = tr.episode_id if tr.episode_id is not None else np.zeros(len(tr), dtype=int)
    times = ds.time
    if times is None:
        times = np.arange(len(tr)) * tr.dt
    lines = [",".join(header)]
    for k in range(len(tr)):
        row = [_fmt(times[k])] + [_fmt(v) for v in tr.u[k]] + [_fmt(v) for v in tr.y[k]]
        row += [str(int(phase[k])), str(int(eid[k]))]
        lines.append(",".join(row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    meta = {"id": ds.id, "dt": _fmt(tr.dt), "m": m, "p": p}
    meta.update({f"meta.{k}": v for k, v in ds.meta.items()})
    meta.update(ds.params)
    meta.update(ds.excitation)
    with open(meta_path(path), "w", encoding="utf-8") as fh:
        for k, v in meta.items():
            fh.write(f"{k} = {_fmt(v) if isinstance(v, float) else v}\n")


def read_kv(path):
    """Flat ``key = value`` file into a dict of strings (``#`` starts a comment)."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for n, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ParseError(f"expected 'key = value' in {path}", n)
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def load_dataset(path):
    """Read a dataset written by :func:`save_dataset`."""
    meta = read_kv(meta_path(path)) if os.path.exists(meta_path(path)) else {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if len(header) < 5 or header[0] != "t" or header[-2:] != ["phase", "episode_id"]:
            raise ParseError("bad dataset header", 1)
        m = sum(1 for h in header if h.startswith("u"))
        p = sum(1 for h in header if h.startswith("y"))
        if m + p + 3 != len(header):
            raise ParseError("bad dataset header", 1)
        ncol = len(header)
        rows = []
        for n, raw in enumerate(fh, 2):
            if not raw.strip():
                continue
            parts = raw.rstrip("\n").split(",")
            if len(parts) != ncol:
                raise ParseError(f"row has {len(parts)} columns, expected {ncol}", n)
            try:
                rows.append([float(v) for v in parts[:-2]]
                            + [int(parts[-2]), int(parts[-1])])
            except ValueError as exc:
                raise ParseError(f"unparsable value ({exc})", n) from None
    if not rows:
        raise ParseError("dataset has no rows", 2)
    data = np.array(rows, dtype=float)
    dt = float(meta.get("dt", data[1, 0] - data[0, 0] if len(rows) > 1 else 1.0))
    traj = IOTrajectory(dt, data[:, 1:1 + m], data[:, 1 + m:1 + m + p],
                        data[:, -2].astype(int), data[:, -1].astype(int))
    params = {k: v for k, v in meta.items() if k.startswith(("plant.", "gait."))}
    exc = {k: v for k, v in meta.items() if k.startswith("prbs.")}
    extra = {k[5:]: v for k, v in meta.items() if k.startswith("meta.")}
    return Dataset(meta.get("id", os.path.basename(str(path))), traj, params, exc,
                   extra, data[:, 0])
