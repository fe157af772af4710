"""Offline-to-online pipeline: collect, build, run, eval."""

import dataclasses
import logging
import math
import os
import time
from collections import deque

import numpy as np

from .behavior import GROUND, concat_columns, hankel, max_pe_order, partition
from .config import format_value
from .densemath import rank
from .errors import InvalidInputError, PlantFault
from .excitation import collect, load_dataset, save_dataset
from .hybridio import compress_past, fill_window, hop_hankel_from_log
from .predictor import (ControllerState, build_predictor, controller_tick, load_predictor,
                        save_predictor, steer_flying, steer_hopping)
from .report import STATUS_CODES, RunReport, check_consistency, compare, format_table, \
    read_report, summarize, write_report, write_table
from .scenarios import Scenario

log = logging.getLogger(__name__)


def _refuse_existing(paths, force):
    for p in paths:
        if os.path.exists(p) and not force:
            raise InvalidInputError(f"{p} exists; pass --force to overwrite")


def companion_path(path, suffix):
    stem, ext = os.path.splitext(str(path))
    return f"{stem}{suffix}{ext or '.csv'}"


def cmd_collect(scn: Scenario, out, force=False):
    """Record every dataset the scenario needs. Returns the written paths."""
    plans = scn.collect_plans()
    paths = [out if not pl.suffix else companion_path(out, pl.suffix) for pl in plans]
    _refuse_existing(paths, force)
    for pl, path in zip(plans, paths):
        ds = collect(pl.rig, pl.base_refs, pl.prbs, pl.duration,
                     dataset_id=os.path.basename(path), perturb_ground=pl.perturb_ground)
        ds.meta["scenario"] = scn.name
        ds.meta["seed"] = scn.seed
        save_dataset(ds, path)
        log.info("wrote %s (%d samples%s)", path, len(ds.traj),
                 ", truncated" if ds.truncated else "")
    return paths


def _input_rank(trajs, depth):
    cols = [hankel(tr.u, depth) for tr in trajs if len(tr) >= depth]
    if not cols:
        return 0, 0
    H = np.hstack(cols)
    return rank(H, 1e-8), H.shape[0]


def build_from_datasets(scn: Scenario, datasets):
    """Predictor plus a diagnostics dict; hopping logs go through fill and stitch."""
    cfg = scn.steer_cfg
    L = cfg.L
    is_hop = [d.traj.phase is not None and bool(np.any(d.traj.phase == GROUND))
              for d in datasets]
    hop_logs = [d for d, h in zip(datasets, is_hop) if h]
    aerial = [d for d, h in zip(datasets, is_hop) if not h]
    for d in datasets:
        if (d.traj.m, d.traj.p) != (scn.m, scn.p):
            raise InvalidInputError(
                f"dataset {d.id}: channels (m={d.traj.m}, p={d.traj.p}) do not match "
                f"scenario (m={scn.m}, p={scn.p})")
        if d.truncated:
            log.warning("dataset %s was truncated by a plant fault", d.id)
    diag = {}
    basis = None
    if scn.hopping:
        if not hop_logs or not aerial:
            raise InvalidInputError(
                "hopping build needs a hop log and an aerial-only dataset")
        hset, filled, stitched = hop_hankel_from_log(
            [d.traj for d in hop_logs], [d.traj for d in aerial], cfg.T_ini, cfg.T_f,
            scn.T_d, scn.T_a, scn.max_fill_residual)
        trajs = [s.traj for s in stitched]
        diag["episodes_filled"] = len(filled)
        diag["max_fill_residual"] = max(f.fill_residual for f in filled)
        diag["stitched_lengths"] = " ".join(str(len(t)) for t in trajs)
        basis = np.vstack(compress_past(hset))
        diag["window_basis_cols"] = basis.shape[1]
    else:
        if hop_logs:
            raise InvalidInputError(f"scenario {scn.name} cannot use ground-phase data")
        trajs = [d.traj for d in aerial]
        hset = concat_columns([partition(t, cfg.T_ini, cfg.T_f, scn.n_assumed,
                                         provenance=[("dataset", d.id)])
                               for t, d in zip(trajs, aerial) if len(t) >= L])
    depth = L + scn.n_assumed
    r, rows = _input_rank(trajs, depth)
    diag["pe_required"] = depth
    diag["pe_achieved"] = max(max_pe_order(t.u, limit=4 * depth) for t in trajs)
    diag["input_rank"] = f"{r}/{rows}"
    if rows == 0 or r < rows:
        raise InvalidInputError(
            f"input data is not persistently exciting of order L + n = {depth} "
            f"(depth-{depth} input Hankel rank {r} of {rows}, best order achieved "
            f"{diag['pe_achieved']})")
    diag["hankel_cols"] = hset.cols
    diag["data_rank"] = rank(hset.stacked(), 1e-8)
    source = " ".join(d.id for d in datasets)
    pred = build_predictor(hset, cfg, source=source)
    if basis is not None:
        pred = dataclasses.replace(pred, basis=basis)
    return pred, diag


def cmd_build(scn: Scenario, dataset_paths, out, force=False):
    _refuse_existing([out], force)
    paths = list(dataset_paths)
    if scn.hopping:
        for p in list(paths):
            comp = companion_path(p, ".aerial")
            if comp not in paths and os.path.exists(comp) and not p.endswith(".aerial.csv"):
                paths.append(comp)
    if not paths:
        raise InvalidInputError("no datasets given (set build.datasets)")
    datasets = [load_dataset(p) for p in paths]
    pred, diag = build_from_datasets(scn, datasets)
    save_predictor(pred, out)
    return pred, diag


def _check_predictor(scn, pred):
    cfg = scn.steer_cfg
    want = (scn.m, scn.p, cfg.T_ini, cfg.T_f)
    got = (pred.m, pred.p, pred.T_ini, pred.T_f)
    if want != got:
        raise InvalidInputError(f"predictor dims (m, p, T_ini, T_f) = {got} do not match "
                                f"scenario {want}")
    if scn.hopping and pred.basis is None:
        raise InvalidInputError("hopping predictor lacks a window basis; rebuild it")


def run_closed_loop(scn: Scenario, pred=None, steering=None):
    """The 200 Hz loop: measure, steer (optional), apply, step. Returns a RunReport.

    A plant fault ends the run early; the report keeps the ticks up to the
    fault and is flagged as truncated.
    """
    steering = scn.steering if steering is None else steering
    cfg = scn.steer_cfg
    if steering:
        if pred is None:
            raise InvalidInputError("steering needs a predictor")
        _check_predictor(scn, pred)
    rig = scn.make_rig()
    rig.reset()
    m, p, Ti, Tf = scn.m, scn.p, cfg.T_ini, cfg.T_f
    past = pred.window_basis() if (steering and scn.hopping) else None
    state = ControllerState(Ti, m, p)
    phases = deque(maxlen=Ti)
    ticks = int(round(scn.duration / rig.dt))
    cols = {k: [] for k in ("t", "ydes", "y", "unom", "u", "phase", "episode", "status",
                            "iterations", "fallback", "apex")}
    times = []
    fault = None
    for _ in range(ticks):
        t = rig.time
        y = np.asarray(rig.measure(), dtype=float)
        phase = rig.phase
        plan = scn.plan(rig, t, Tf)
        u = plan.u_now
        status, iters, fb, dt_solve = "off", 0, 0, math.nan
        if steering:
            res, status, dt_solve = _steer(scn, pred, state, plan, phases, phase, past)
            if res is not None:
                u = res.u[0]
                iters, fb = res.iterations, int(res.fallback)
        cols["t"].append(t)
        cols["ydes"].append(plan.y_des[0])
        cols["y"].append(y)
        cols["unom"].append(plan.u_now)
        cols["u"].append(np.asarray(u, dtype=float))
        cols["phase"].append(phase)
        cols["episode"].append(rig.episode)
        cols["status"].append(STATUS_CODES.index(status))
        cols["iterations"].append(iters)
        cols["fallback"].append(fb)
        cols["apex"].append(math.nan)
        times.append(dt_solve)
        try:
            events = rig.apply(u)
        except PlantFault as exc:
            fault = exc
            log.warning("run stopped by plant fault: %s", exc)
            break
        for e in events:
            if e.kind == "apex":
                cols["apex"][-1] = e.state.z
        controller_tick(state, y, u)
        phases.append(phase)
    records = {"t": np.array(cols["t"])}
    for key, n in (("ydes", p), ("y", p), ("unom", m), ("u", m)):
        arr = np.array(cols[key]).reshape(-1, n)
        for i in range(n):
            records[f"{key}{i + 1}"] = arr[:, i].copy()
    for key in ("phase", "episode", "status", "iterations", "fallback", "apex"):
        records[key] = np.array(cols[key], dtype=float)
    config = {"scenario": scn.name, "seed": str(scn.seed),
              "steering": "on" if steering else "off"}
    config.update({k: format_value(v) for k, v in sorted(scn.settings.used.items())
                   if k not in ("scenario", "seed", "steering")})
    if pred is not None and steering:
        config["predictor.source"] = pred.source
    rep = RunReport(m, p, records, config, solve_times=np.array(times))
    rep.summary = summarize(records, config, m, p)
    rep.summary["truncated"] = int(fault is not None)
    if fault is not None:
        rep.summary["fault"] = str(fault)
    return rep


def _steer(scn, pred, state, plan, phases, phase, past):
    """One steering decision: ``(SteerResult or None, status, seconds)``."""
    if not state.primed:
        return None, "priming", math.nan
    if phase == GROUND:
        return None, "ground", math.nan
    cfg = scn.steer_cfg
    ui, yi = state.u_ini(), state.y_ini()
    ph = np.array(phases, dtype=int)
    t0 = time.perf_counter()
    if np.any(ph == GROUND):
        trail = len(ph) - 1 - int(np.flatnonzero(ph == GROUND).max())
        if trail < scn.min_ascend:
            return None, "wait", math.nan
        ui, yi, _ = fill_window(ui, yi, ph, past)
        res = steer_hopping(pred, state, plan.y_des, cfg, ui, yi, u_nom=plan.u_nom)
    else:
        res = steer_flying(pred, state, plan.y_des, cfg, u_nom=plan.u_nom)
    return res, res.status, (time.perf_counter() - t0) * 1e3


def cmd_run(scn: Scenario, predictor_path, out, force=False):
    _refuse_existing([out], force)
    pred = None
    if scn.steering:
        if not predictor_path or not os.path.exists(predictor_path):
            raise InvalidInputError(f"predictor file {predictor_path!r} does not exist")
        pred = load_predictor(predictor_path)
    rep = run_closed_loop(scn, pred)
    write_report(rep, out)
    return rep


def cmd_eval(report_paths, out, force=False):
    _refuse_existing([out], force)
    if not report_paths:
        raise InvalidInputError("no reports given (set eval.reports)")
    reports = [read_report(p) for p in report_paths]
    for p, rep in zip(report_paths, reports):
        bad = check_consistency(rep)
        if bad:
            raise InvalidInputError(f"{p}: summary disagrees with rows ({', '.join(bad)})")
    rows = compare(reports, [os.path.basename(p) for p in report_paths])
    write_table(rows, out)
    return rows, format_table(rows)

