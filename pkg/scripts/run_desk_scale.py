"""Run the desk-scale experiments and write one JSON report per run.

    python scripts/run_desk_scale.py --out results/ [--quick] [--workers 4]
"""

import argparse
import logging
import time
from pathlib import Path

from sketch_attack.harness import ExperimentConfig, emit_report, run_experiment

RUNS = {
    "hh-median": dict(mode="countsketch_hh"),
    "hh-trimmed": dict(mode="countsketch_hh", estimator="trimmed_mean", controls=0),
    "hh-random": dict(mode="countsketch_hh", estimator="random_threshold", controls=0),
    "hh-flipping": dict(mode="countsketch_hh", estimator="state_flipping", controls=0),
    "ip-median": dict(mode="inner_product", controls=0),
    "mean-est": dict(mode="mean_est"),
    "ams": dict(mode="ams"),
}
QUICK = dict(n_seeds=4)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("results"))
    ap.add_argument("--only", nargs="*", choices=sorted(RUNS), help="subset of runs")
    ap.add_argument("--quick", action="store_true", help="4 seeds per run (mean-est keeps its 2000)")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--master-seed", type=int, default=0)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    logging.getLogger("sketch_attack").setLevel(logging.WARNING)
    failed = []
    for name in args.only or RUNS:
        kw = dict(RUNS[name], workers=args.workers, master_seed=args.master_seed)
        if args.quick and kw["mode"] != "mean_est":
            kw.update(QUICK)
        t0 = time.perf_counter()
        rep = run_experiment(ExperimentConfig(**kw))
        path = emit_report(rep, "json", args.out / f"{name}.json")
        rules = ", ".join(f"{k}={v['value']}" for k, v in rep.aggregates.items() if "value" in v)
        logging.info("%-12s %s  %s  (%.1fs) -> %s", name, "PASS" if rep.passed else "FAIL", rules,
                     time.perf_counter() - t0, path)
        if not rep.passed:
            failed.append(name)
    return 1 if failed else 0


if __name__ == "__main__":
    raise SystemExit(main())
