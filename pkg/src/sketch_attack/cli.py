"""Command-line entry point: ``sketch-attack <subcommand> [flags]``.

Exit status: 0 pass, 1 fail, 2 usage error, 3 estimator gate failure,
4 report not writable.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys

import numpy as np

from .attack import DESK_A, DESK_C, GateFailure
from .estimators import EstimatorError, verify_correctness
from .harness import (
    EXIT_FAIL,
    EXIT_GATE,
    EXIT_IO,
    EXIT_PASS,
    EXIT_USAGE,
    OUT_ENV,
    ConfigError,
    ExperimentConfig,
    RunReport,
    default_out_path,
    emit_report,
    make_estimator,
    read_config_file,
    run_experiment,
)

COMMAND_MODES = {
    "attack-hh": "countsketch_hh",
    "attack-ip": "inner_product",
    "attack-ams": "ams",
    "mean-est": "mean_est",
}

# argparse dest -> ExperimentConfig field
_FLAG_FIELDS = {
    "ell": "ell", "b": "b", "B": "B", "r": "r", "m": "m", "n": "n", "epsilon": "epsilon", "xi": "xi",
    "tau": "tau", "delta2": "delta2", "delta": "delta", "a": "a", "c": "c", "g": "g", "sigma": "sigma",
    "estimator": "estimator", "master_seed": "master_seed", "controls": "controls",
    "gate_trials": "gate_trials", "workers": "workers", "format": "format",
}


def parse_seeds(text: str) -> dict:
    """``"20"`` means 20 seeds derived from the master seed; ``"3,5,8"`` an explicit list."""
    text = text.strip()
    if "," in text:
        return {"seeds": tuple(int(x) for x in text.split(",") if x.strip())}
    return {"n_seeds": int(text)}


def _add_sketch_flags(p):
    p.add_argument("--config", help="flat key = value file; flags override it")
    p.add_argument("--ell", type=int, help="rows")
    p.add_argument("--b", type=int, help="buckets per row")
    p.add_argument("--n", type=int, help="key-space size (default 2^63)")
    p.add_argument("--r", type=int, help="number of queries")
    p.add_argument("--delta2", type=float, help="failure parameter; gate delta defaults to delta2^(1/4)")
    p.add_argument("--delta", type=float, help="correctness level checked by the gate")
    p.add_argument("--estimator", help="reporting function kind")
    p.add_argument("--seeds", help="seed count (derived from --master-seed) or comma list")
    p.add_argument("--master-seed", type=int, dest="master_seed")
    p.add_argument("--controls", type=int, help="fresh seeds for the control check (default 100)")
    p.add_argument("--gate-trials", type=int, dest="gate_trials")
    p.add_argument("--workers", type=int, help="worker processes for independent seeds")
    p.add_argument("--random-subsets", action="store_true", help="uniform h and random tail supports")
    p.add_argument("--out", help=f"report path (default ${OUT_ENV}/<mode>-report.<fmt>, else stdout)")
    p.add_argument("--format", choices=("json", "csv"))
    p.add_argument("--timings", action="store_true", help="include per-seed wall-clock in the report")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sketch-attack", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    for name, help_ in [("attack-hh", "attack a CountSketch heavy-hitter estimator"),
                        ("attack-ip", "attack a CountSketch inner-product estimator")]:
        p = sub.add_parser(name, help=help_)
        _add_sketch_flags(p)
        p.add_argument("--B", type=float, help="r = B * ell^2 when --r is absent")
        p.add_argument("--m", type=int, help="tail support (default 256 b)")
        p.add_argument("--a", type=float, help=f"lower threshold in sigma units (default {DESK_A})")
        p.add_argument("--c", type=float, help=f"upper threshold in sigma units (default {DESK_C})")
        p.add_argument("--g", type=float, help="guard width (default a)")

    p = sub.add_parser("attack-ams", help="attack an AMS norm estimator (b = 1)")
    _add_sketch_flags(p)
    p.add_argument("--m", type=int, help="tail support (default 256)")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--xi", type=float)
    p.add_argument("--tau", type=float)

    p = sub.add_parser("mean-est", help="mean-estimation attack on Gaussian samples")
    _add_sketch_flags(p)
    p.add_argument("--sigma", type=float)
    p.add_argument("--a", type=float)
    p.add_argument("--c", type=float)
    p.add_argument("--g", type=float)

    p = sub.add_parser("verify-estimator", help="Monte Carlo correctness check of one reporting function")
    p.add_argument("--estimator", default="median_threshold")
    p.add_argument("--ell", type=int, default=9)
    p.add_argument("--b", type=int, default=32)
    p.add_argument("--m", type=int)
    p.add_argument("--delta2", type=float, default=1e-3)
    p.add_argument("--delta", type=float)
    p.add_argument("--a", type=float, default=DESK_A)
    p.add_argument("--c", type=float, default=DESK_C)
    p.add_argument("--epsilon", type=float, default=0.5, help="mean_of_squares only")
    p.add_argument("--tau", type=float, default=1.0, help="mean_of_squares only")
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--master-seed", type=int, default=0, dest="master_seed")
    p.add_argument("--format", choices=("text", "json"), default="text")

    p = sub.add_parser("report", help="re-emit a saved JSON report (e.g. as CSV); exit status from its verdict")
    p.add_argument("path")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--out")
    return ap


def config_from_args(args) -> ExperimentConfig:
    kw = read_config_file(args.config) if getattr(args, "config", None) else {}
    kw["mode"] = COMMAND_MODES[args.command]
    for dest, fld in _FLAG_FIELDS.items():
        v = getattr(args, dest, None)
        if v is not None:
            kw[fld] = v
    if getattr(args, "seeds", None) is not None:
        kw.pop("seeds", None)
        kw.pop("n_seeds", None)
        kw.update(parse_seeds(args.seeds))
    if getattr(args, "random_subsets", False):
        kw["random_subsets"] = True
    if args.out is not None:
        kw["out"] = args.out
    return ExperimentConfig(**kw)


def _cmd_run(args) -> int:
    cfg = config_from_args(args)
    try:
        report = run_experiment(cfg)
    except GateFailure as e:
        print(f"gate failure: {e}", file=sys.stderr)
        return EXIT_GATE
    path = cfg.out or default_out_path(cfg.mode, cfg.format)
    try:
        written = emit_report(report, cfg.format, path, timings=args.timings)
    except OSError as e:
        print(str(e), file=sys.stderr)
        return EXIT_IO
    summary = ", ".join(f"{k}={'pass' if v['pass'] else 'FAIL'}" for k, v in report.aggregates.items()
                        if isinstance(v, dict) and "pass" in v)
    where = f" -> {written}" if written else ""
    print(f"{cfg.mode}: {len(report.records)} seeds, {summary or 'no aggregates'}{where}", file=sys.stderr)
    return EXIT_PASS if report.passed else EXIT_FAIL


def _cmd_verify(args) -> int:
    if args.trials < 1000:
        raise ConfigError("trials", "need at least 1000")
    if args.estimator == "mean_of_squares":
        cfg = ExperimentConfig(mode="ams", ell=args.ell, epsilon=args.epsilon, tau=args.tau,
                               delta=args.delta or 0.1, seeds=())
        view = np.square
    else:
        cfg = ExperimentConfig(mode="countsketch_hh", ell=args.ell, b=args.b, m=args.m, a=args.a, c=args.c,
                               delta2=args.delta2, delta=args.delta, estimator=args.estimator, seeds=())
        view = None
    params = cfg.correctness()
    f = make_estimator(cfg, args.master_seed)
    rep = verify_correctness(f, params, trials=args.trials, seed=args.master_seed, view=view)
    if args.format == "json":
        print(json.dumps({**rep.as_dict(), "delta": params.delta, "a": params.a, "c": params.c}, sort_keys=True))
    else:
        print(f"rate_at_c {rep.rate_at_c:.6f}")
        print(f"rate_at_a {rep.rate_at_a:.6f}")
        print("pass" if rep.passed else "fail")
    return EXIT_PASS if rep.passed else EXIT_FAIL


def _cmd_report(args) -> int:
    with open(args.path) as fh:
        doc = json.load(fh)
    report = RunReport(doc["config"], doc["records"], doc["aggregates"], doc["pass"], doc.get("wall_clock", []))
    try:
        emit_report(report, args.format, args.out, timings="wall_clock" in doc)
    except OSError as e:
        print(str(e), file=sys.stderr)
        return EXIT_IO
    return EXIT_PASS if report.passed else EXIT_FAIL


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command in COMMAND_MODES:
            return _cmd_run(args)
        if args.command == "verify-estimator":
            return _cmd_verify(args)
        return _cmd_report(args)
    except (ConfigError, EstimatorError, ValueError) as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(str(e), file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
