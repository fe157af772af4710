"""Run reports: per-tick records, summary metrics, and their CSV form."""

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .behavior import AERIAL
from .errors import InvalidInputError, ParseError

REPORT_MAGIC = "# refsteer-report v1"
EVAL_MAGIC = "# refsteer-eval v1"

STATUS_CODES = ("off", "priming", "ground", "wait", "solved", "max_iter", "infeasible")


def record_columns(m, p):
    return (["t"] + [f"ydes{i + 1}" for i in range(p)] + [f"y{i + 1}" for i in range(p)]
            + [f"unom{i + 1}" for i in range(m)] + [f"u{i + 1}" for i in range(m)]
            + ["phase", "episode", "status", "iterations", "fallback", "apex"])


@dataclass
class RunReport:
    """Closed-loop log. ``records`` maps column name to a 1-D array."""

    m: int
    p: int
    records: dict
    config: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    solve_times: np.ndarray = None

    def __len__(self):
        return len(self.records["t"])

    def channel(self, prefix, n):
        return np.column_stack([self.records[f"{prefix}{i + 1}"] for i in range(n)])

    @property
    def scenario(self):
        return self.config.get("scenario", "")

    @property
    def seed(self):
        return self.config.get("seed", "")


def summarize(records, config, m, p):
    """Summary metrics from per-tick records and the resolved config alone."""
    n = len(records["t"])
    out = {"records": n}
    if n == 0:
        return out
    y = np.column_stack([records[f"y{i + 1}"] for i in range(p)])
    yd = np.column_stack([records[f"ydes{i + 1}"] for i in range(p)])
    err = y - yd
    half = err[n // 2:]
    for i in range(p):
        out[f"rms.y{i + 1}"] = float(np.sqrt(np.mean(err[:, i] ** 2)))
        out[f"offset.y{i + 1}"] = float(np.mean(half[:, i]))
    out["fallbacks"] = int(np.sum(records["fallback"]))
    solved = records["status"] >= STATUS_CODES.index("solved")
    out["solves"] = int(np.sum(solved))
    if str(config.get("scenario")) == "hopping-periodic":
        out.update(_hop_metrics(records, config))
    return out


def _hop_metrics(records, config):
    apex_des = float(config["gait.apex"])
    skip = int(config.get("hop.skip_apexes", 0))
    apexes = records["apex"][np.isfinite(records["apex"])][skip:]
    res = {"hops": int(apexes.size)}
    res["apex_mae"] = float(np.mean(np.abs(apexes - apex_des))) if apexes.size else math.nan
    # commanded height peak per flight, over flights bounded by two touchdowns
    ep = records["episode"].astype(int)
    aerial = records["phase"].astype(int) == AERIAL
    peaks = []
    for e in range(max(skip, 1), int(ep.max()) if ep.size else 0):
        sel = aerial & (ep == e)
        if sel.any():
            peaks.append(records["u1"][sel].max())
    peaks = np.array(peaks)
    res["ref_apex_frac"] = float(np.mean(peaks > apex_des)) if peaks.size else math.nan
    return res


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def timing_path(path):
    return str(path) + ".timing"


def write_report(rep, path):
    """CSV with ``#`` comment lines for config and summary; solve times go to a
    ``.timing`` sidecar so the report itself is deterministic."""
    cols = record_columns(rep.m, rep.p)
    lines = [REPORT_MAGIC, f"# m = {rep.m}", f"# p = {rep.p}"]
    lines += [f"# config.{k} = {v}" for k, v in rep.config.items()]
    lines += [f"# summary.{k} = {_fmt(v)}" for k, v in rep.summary.items()]
    lines.append(",".join(cols))
    data = [rep.records[c] for c in cols]
    ints = {"phase", "episode", "status", "iterations", "fallback"}
    for k in range(len(rep)):
        row = []
        for c, col in zip(cols, data):
            row.append(str(int(col[k])) if c in ints else "%.17g" % col[k])
        lines.append(",".join(row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    if rep.solve_times is not None:
        with open(timing_path(path), "w", encoding="utf-8") as fh:
            fh.write("solve_ms\n")
            for v in rep.solve_times:
                fh.write("%.6g\n" % v)


def read_report(path):
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != REPORT_MAGIC:
        raise ParseError(f"{path}: missing {REPORT_MAGIC!r} header", 1)
    meta, config, summary = {}, {}, {}
    i = 1
    while i < len(lines) and lines[i].startswith("#"):
        key, sep, val = lines[i][1:].partition("=")
        if not sep:
            raise ParseError(f"{path}: bad comment line", i + 1)
        key, val = key.strip(), val.strip()
        if key.startswith("config."):
            config[key[7:]] = val
        elif key.startswith("summary."):
            summary[key[8:]] = val
        else:
            meta[key] = val
        i += 1
    try:
        m, p = int(meta["m"]), int(meta["p"])
    except (KeyError, ValueError):
        raise ParseError(f"{path}: missing m/p header lines") from None
    cols = record_columns(m, p)
    if i >= len(lines) or lines[i].split(",") != cols:
        raise ParseError(f"{path}: unexpected column header", i + 1)
    rows = []
    for n, line in enumerate(lines[i + 1:], i + 2):
        parts = line.split(",")
        if len(parts) != len(cols):
            raise ParseError(f"{path}: row has {len(parts)} fields, expected {len(cols)}", n)
        try:
            rows.append([float(v) for v in parts])
        except ValueError:
            raise ParseError(f"{path}: unparsable number", n) from None
    arr = np.array(rows, dtype=float).reshape(-1, len(cols))
    records = {c: arr[:, j].copy() for j, c in enumerate(cols)}
    times = None
    if os.path.exists(timing_path(path)):
        with open(timing_path(path), encoding="utf-8") as fh:
            times = np.array([float(v) for v in fh.read().split()[1:]])
    return RunReport(m, p, records, config, summary, times)


def check_consistency(rep):
    """Recompute the summary from the records; return the mismatching keys."""
    fresh = summarize(rep.records, rep.config, rep.m, rep.p)
    bad = []
    for k, v in fresh.items():
        if k not in rep.summary or rep.summary[k] != _fmt(v):
            bad.append(k)
    return bad


def _ratio(a, b):
    if b == 0:
        return 1.0 if a == 0 else math.inf
    return a / b


def compare(reports, names=None):
    """Comparison rows against the first report (the baseline).

    Reports must share scenario and seed.
    """
    if not reports:
        raise InvalidInputError("need at least one report")
    names = names or [f"report{i}" for i in range(len(reports))]
    base = reports[0]
    for r, name in zip(reports[1:], names[1:]):
        if (r.scenario, r.seed) != (base.scenario, base.seed):
            raise InvalidInputError(
                f"{name}: scenario/seed {(r.scenario, r.seed)} differs from baseline "
                f"{(base.scenario, base.seed)}")
        if (r.m, r.p) != (base.m, base.p):
            raise InvalidInputError(f"{name}: channel counts differ from baseline")
    stats = [summarize(r.records, r.config, r.m, r.p) for r in reports]
    rows = []
    for r, name, st in zip(reports, names, stats):
        row = {"report": name, "scenario": r.scenario, "seed": r.seed,
               "steering": r.config.get("steering", "")}
        for i in range(r.p):
            k = f"rms.y{i + 1}"
            row[f"rms_y{i + 1}"] = st[k]
            row[f"ratio_rms_y{i + 1}"] = _ratio(st[k], stats[0][k])
        if "apex_mae" in st:
            row["apex_mae"] = st["apex_mae"]
            row["ratio_apex"] = _ratio(st["apex_mae"], stats[0]["apex_mae"])
        t = r.solve_times
        t = t[np.isfinite(t)] if t is not None else np.array([])
        row["solve_p50_ms"] = float(np.percentile(t, 50)) if t.size else math.nan
        row["solve_p99_ms"] = float(np.percentile(t, 99)) if t.size else math.nan
        rows.append(row)
    return rows


def write_table(rows, path):
    cols = list(rows[0])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(EVAL_MAGIC + "\n" + ",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row[c]) for c in cols) + "\n")


def format_table(rows):
    cols = list(rows[0])
    cells = [[c for c in cols]]
    for row in rows:
        cells.append([("%.4g" % row[c]) if isinstance(row[c], float) else str(row[c])
                      for c in cols])
    widths = [max(len(r[j]) for r in cells) for j in range(len(cols))]
    return "\n".join("  ".join(v.rjust(w) for v, w in zip(r, widths)) for r in cells)
