"""Command-line entry point: ``refsteer collect|build|run|eval``."""

import argparse
import logging
import sys

from . import harness
from .config import Settings, load_config
from .errors import PlantFault, RefsteerError
from .excitation import load_dataset
from .report import timing_path
from .scenarios import Scenario

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_FAULT = 3


def _parser():
    ap = argparse.ArgumentParser(prog="refsteer",
                                 description="Data-driven reference steering pipeline.")
    ap.add_argument("command", choices=("collect", "build", "run", "eval"))
    ap.add_argument("reports", nargs="*", help="report files to compare (eval only)")
    ap.add_argument("--config", help="flat key = value scenario file")
    ap.add_argument("--out", required=True, help="output path")
    ap.add_argument("--force", action="store_true", help="overwrite existing outputs")
    ap.add_argument("--seed", type=int, help="override the config seed")
    ap.add_argument("--steering", choices=("on", "off"), help="override steering")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override one config key (repeatable)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _settings(args):
    raw = load_config(args.config) if args.config else {}
    for item in args.set:
        key, sep, val = item.partition("=")
        if not sep:
            raise RefsteerError(f"--set expects KEY=VALUE, got {item!r}")
        raw[key.strip()] = val.strip()
    return Settings(raw)


def _scenario(args, settings):
    steering = None if args.steering is None else args.steering == "on"
    return Scenario(settings, seed=args.seed, steering=steering)


def _collect(args, s):
    scn = _scenario(args, s)
    paths = harness.cmd_collect(scn, args.out, args.force)
    code = EXIT_OK
    for p in paths:
        ds = load_dataset(p)
        flag = ""
        if ds.truncated:
            flag = f"  TRUNCATED ({ds.meta.get('fault', 'plant fault')})"
            code = EXIT_FAULT
        print(f"{p}: {len(ds.traj)} samples{flag}")
    return code


def _build(args, s):
    scn = _scenario(args, s)
    paths = s.paths("build.datasets") if s.has("build.datasets") else []
    pred, diag = harness.cmd_build(scn, paths, args.out, args.force)
    print(f"predictor {args.out}: G {pred.G.shape[0]}x{pred.G.shape[1]} "
          f"(m={pred.m}, p={pred.p}, T_ini={pred.T_ini}, T_f={pred.T_f})")
    for k, v in diag.items():
        print(f"  {k} = {v}")
    for w in pred.warnings:
        print(f"  warning: {w}")
    return EXIT_OK


def _run(args, s):
    scn = _scenario(args, s)
    pred_path = s.path("run.predictor") if s.has("run.predictor") else None
    rep = harness.cmd_run(scn, pred_path, args.out, args.force)
    for k, v in rep.summary.items():
        print(f"{k} = {v}")
    print(f"report {args.out} ({len(rep)} ticks), solve times in {timing_path(args.out)}")
    if rep.summary.get("truncated"):
        print(f"run truncated: {rep.summary.get('fault')}", file=sys.stderr)
        return EXIT_FAULT
    return EXIT_OK


def _eval(args, s):
    paths = list(args.reports) or (s.paths("eval.reports") if s.has("eval.reports") else [])
    _, table = harness.cmd_eval(paths, args.out, args.force)
    print(table)
    return EXIT_OK


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.reports and args.command != "eval":
        print("error: positional report paths are only accepted by eval", file=sys.stderr)
        return EXIT_INVALID
    if args.config is None and args.command != "eval":
        print("error: --config is required", file=sys.stderr)
        return EXIT_INVALID
    handler = {"collect": _collect, "build": _build, "run": _run, "eval": _eval}
    try:
        return handler[args.command](args, _settings(args))
    except PlantFault as exc:
        print(f"plant fault: {exc}", file=sys.stderr)
        return EXIT_FAULT
    except (RefsteerError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
