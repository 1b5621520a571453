"""Seeded experiment runner: config, per-seed attack + verification, reports.

A report is a pure function of the config. Wall-clock timings are kept on
the in-memory report and logged, but left out of the emitted file unless
asked for, so repeated runs produce identical bytes.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attack import DESK_A, DESK_C, AttackConfig, ams_attack, ams_guard_width, attack_tails, gate, mean_est_attack, universal_attack
from .estimators import (
    ESTIMATOR_KINDS,
    Constant,
    CorrectnessParams,
    EstimatorError,
    norm_estimator,
    randomized_estimator_family,
)
from .sketch import SketchParams, SketchRandomness, derive_seed
from .verification import (
    ams_bias_under,
    ams_control_ratios,
    bias_under,
    control_biases,
    control_bound,
    mean_attack_stats,
    stack_common_support,
)

log = logging.getLogger(__name__)

MODES = ("countsketch_hh", "inner_product", "mean_est", "ams")
OUT_ENV = "SKETCH_ATTACK_OUT"

EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_GATE, EXIT_IO = 0, 1, 2, 3, 4

# stream ids under a seed / the master seed
_RHO, _EST, _CONTROL, _GATE = 101, 102, 103, 104


class ConfigError(ValueError):
    def __init__(self, field_name: str, msg: str):
        super().__init__(f"{field_name}: {msg}")
        self.field = field_name


def derive_seeds(master: int, count: int) -> list[int]:
    """Per-run seeds from a master seed by counter mixing."""
    return [derive_seed(master, i) for i in range(count)]


# Per-mode defaults; None entries in ExperimentConfig fall back to these.
MODE_DEFAULTS = {
    "countsketch_hh": dict(ell=9, b=32, B=4.0, a=DESK_A, c=DESK_C, estimator="median_threshold", n_seeds=20),
    "inner_product": dict(ell=9, b=32, B=4.0, a=DESK_A, c=DESK_C, estimator="median_threshold", n_seeds=20),
    "mean_est": dict(ell=9, b=1, r=500, a=0.3, c=1.3, sigma=1.0, delta=0.1, estimator="median_threshold", n_seeds=2000),
    "ams": dict(ell=100, b=1, epsilon=0.5, xi=0.5, tau=1.0, m=256, delta=0.1, estimator="mean_of_squares", n_seeds=20),
}


@dataclass
class ExperimentConfig:
    """One experiment. Unset fields take the per-mode defaults in MODE_DEFAULTS.

    Seeds are ``seeds`` if given, else ``n_seeds`` seeds derived from
    ``master_seed``. For CountSketch modes r = B ell^2 unless r is set.
    """

    mode: str = "countsketch_hh"
    ell: int | None = None
    b: int | None = None
    n: int = 1 << 63
    B: float | None = None
    r: int | None = None
    m: int | None = None
    delta2: float = 1e-3
    delta: float | None = None
    epsilon: float | None = None
    xi: float | None = None
    tau: float | None = None
    a: float | None = None
    c: float | None = None
    g: float | None = None
    sigma: float | None = None
    estimator: str | None = None
    seeds: tuple | None = None
    master_seed: int = 0
    n_seeds: int | None = None
    controls: int = 100
    gate_trials: int = 4000
    random_subsets: bool = False
    workers: int = 1
    out: str | None = None
    format: str = "json"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError("mode", f"unknown mode {self.mode!r}; choose from {MODES}")
        for k, v in MODE_DEFAULTS[self.mode].items():
            if getattr(self, k) is None:
                setattr(self, k, v)
        if self.seeds is not None:
            self.seeds = tuple(int(s) for s in self.seeds)
        self._derive()
        self._validate()

    def _derive(self):
        if self.mode in ("countsketch_hh", "inner_product"):
            if self.m is None:
                self.m = 256 * self.b
            if self.r is None:
                self.r = int(round(self.B * self.ell ** 2))
            if self.delta is None:
                self.delta = self.delta2 ** 0.25
        elif self.mode == "ams":
            if self.r is None:
                self.r = int(math.ceil(self.xi * self.ell ** 2 * self.epsilon ** 2))
            self.sigma = self.tau / math.sqrt(2)
            self.a, self.c = 1.0, math.sqrt(1 + 2 * self.epsilon)
            self.g = ams_guard_width(self.ell, self.epsilon, self.a)
        if self.g is None and self.a is not None:
            self.g = self.a

    def _validate(self):
        if self.ell < 1:
            raise ConfigError("ell", "must be >= 1")
        if self.b < 1:
            raise ConfigError("b", "must be >= 1")
        if self.mode == "ams" and self.b != 1:
            raise ConfigError("b", "ams mode requires b = 1")
        if self.mode in ("countsketch_hh", "inner_product") and self.b < 2:
            raise ConfigError("b", "countsketch modes require b >= 2")
        if self.r is None or self.r < 1:
            raise ConfigError("r", "must be >= 1")
        if self.mode != "mean_est" and (self.m is None or self.m < 1):
            raise ConfigError("m", "must be >= 1")
        if self.mode != "mean_est" and self.n <= self.r * self.m + 1:
            raise ConfigError("n", "key space too small for r * m + 1 keys")
        if not 0 < self.delta2 < 1:
            raise ConfigError("delta2", "must lie in (0, 1)")
        if not 0 < self.delta < 0.5:
            raise ConfigError("delta", "must lie in (0, 1/2)")
        if self.mode != "ams" and not 0 < self.g <= self.a < self.c:
            raise ConfigError("g", f"need 0 < g <= a < c, got g={self.g}, a={self.a}, c={self.c}")
        if self.mode == "ams" and self.epsilon < 1 / math.sqrt(self.ell):
            raise ConfigError("epsilon", "below the 1/sqrt(ell) feasibility scale")
        if self.mode == "mean_est" and 0 < len(self.seed_list()) < 100:
            raise ConfigError("seeds", "mean_est needs 0 or at least 100 runs")
        if self.controls < 0:
            raise ConfigError("controls", "must be >= 0")
        if self.workers < 1:
            raise ConfigError("workers", "must be >= 1")
        if self.format not in ("json", "csv"):
            raise ConfigError("format", "must be json or csv")
        try:
            make_estimator(self, 0)
        except EstimatorError as e:
            raise ConfigError("estimator", str(e)) from None

    def seed_list(self) -> list[int]:
        if self.seeds is not None:
            return list(self.seeds)
        return derive_seeds(self.master_seed, self.n_seeds)

    def correctness(self) -> CorrectnessParams:
        if self.mode in ("countsketch_hh", "inner_product"):
            sigma = math.sqrt(self.m / self.b)
        else:
            sigma = self.sigma
        return CorrectnessParams(self.delta, self.a, self.c, self.ell, sigma)

    def attack_config(self, seed: int) -> AttackConfig:
        return AttackConfig(
            SketchParams(self.n, self.ell, self.b), r=self.r, m=self.m, a=self.a, c=self.c, g=self.g,
            delta2=self.delta2, delta=self.delta, seed=seed, random_subsets=self.random_subsets,
        )

    def echo(self) -> dict:
        d = dataclasses.asdict(self)
        for k in ("out", "workers", "format"):
            d.pop(k)
        d["seeds"] = self.seed_list()
        return d


_FIELD_TYPES = {
    "mode": str, "ell": int, "b": int, "n": int, "B": float, "r": int, "m": int, "delta2": float,
    "delta": float, "epsilon": float, "xi": float, "tau": float, "a": float, "c": float, "g": float,
    "sigma": float, "estimator": str, "master_seed": int, "n_seeds": int, "controls": int,
    "gate_trials": int, "workers": int, "out": str, "format": str,
}


def _parse_bool(s: str) -> bool:
    if s.lower() in ("1", "true", "yes", "on"):
        return True
    if s.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def parse_value(key: str, raw: str):
    raw = raw.strip()
    if key == "seeds":
        return tuple(int(x) for x in raw.replace(",", " ").split())
    if key == "random_subsets":
        return _parse_bool(raw)
    if key not in _FIELD_TYPES:
        raise ConfigError(key, "unknown config key")
    typ = _FIELD_TYPES[key]
    try:
        return int(float(raw)) if typ is int and "e" in raw.lower() else typ(raw)
    except ValueError:
        raise ConfigError(key, f"cannot parse {raw!r}") from None


def read_config_file(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", "expected key = value")
        k, v = (x.strip() for x in line.split("=", 1))
        out[k] = parse_value(k, v)
    return out


def make_estimator(cfg: ExperimentConfig, seed: int):
    kind = cfg.estimator
    if kind.startswith("constant"):
        p = kind.partition("-")[2] or kind.partition(":")[2] or "1"
        return Constant(float(p))
    if cfg.mode == "ams":
        return norm_estimator(cfg.tau, cfg.epsilon, kind)
    if kind not in ESTIMATOR_KINDS:
        raise EstimatorError(f"unknown estimator kind {kind!r}; choose from {ESTIMATOR_KINDS}")
    return randomized_estimator_family(kind, cfg.correctness(), derive_seed(seed, _EST))


@dataclass
class RunReport:
    config: dict
    records: list
    aggregates: dict
    passed: bool
    wall_clock: list = field(default_factory=list)

    def as_dict(self, timings: bool = False) -> dict:
        d = {"config": self.config, "records": self.records, "aggregates": self.aggregates, "pass": self.passed}
        if timings:
            d["wall_clock"] = self.wall_clock
        return d


def _rule(value, threshold, ok) -> dict:
    return {"value": value, "threshold": threshold, "pass": bool(ok)}


def _seed_job(cfg: ExperimentConfig, seed: int):
    """One attack + verification: (record, report bits, mean-attack output, seconds)."""
    t0 = time.perf_counter()
    if cfg.mode == "mean_est":
        out = mean_est_attack(make_estimator(cfg, seed), cfg.a, cfg.c, cfg.g, cfg.sigma, cfg.ell, cfg.r, seed)
        rec = {"seed": seed, "u_bar": out.u_bar, "sq_norm": float(out.u_A @ out.u_A / cfg.ell),
               "reported": int(np.sum(out.s > 0))}
        return rec, None, out, time.perf_counter() - t0
    rho = SketchRandomness(SketchParams(cfg.n, cfg.ell, cfg.b), derive_seed(seed, _RHO))
    f = make_estimator(cfg, seed)
    if cfg.mode == "ams":
        tr = ams_attack(rho, f, cfg.tau, cfg.epsilon, cfg.r, cfg.m, seed, cfg.delta, check=False,
                        random_subsets=cfg.random_subsets)
        rep = ams_bias_under(rho, tr.z_A, cfg.xi)
        rec = {"seed": seed, **rep.as_dict(), "desk_adversarial": bool(rep.ratio >= 1 + cfg.xi / 2),
               "reported": int(np.sum(tr.s > 0))}
    else:
        acfg = cfg.attack_config(seed)
        tr = universal_attack(rho, f, acfg, mode="hh" if cfg.mode == "countsketch_hh" else "ip", check=False)
        rep = bias_under(rho, tr.z_A, tr.h, cfg.B, acfg)
        rec = {"seed": seed, **rep.as_dict(), "reported": int(np.sum(tr.s > 0))}
    return rec, tr.s, None, time.perf_counter() - t0


def _rebuild(cfg: ExperimentConfig, seed: int, s):
    scale = 1.0 if cfg.mode != "ams" else cfg.sigma / math.sqrt(cfg.m)
    tails = attack_tails(cfg.n, cfg.m, cfg.r, seed, cfg.random_subsets, scale)
    return tails.h, tails.combine(s)


def _run_gate(cfg: ExperimentConfig, seeds):
    if cfg.mode == "mean_est" or not seeds:
        return None
    f = make_estimator(cfg, seeds[0])
    view = np.square if cfg.mode == "ams" else None
    return gate(f, cfg.correctness(), cfg.gate_trials, derive_seed(cfg.master_seed, _GATE), view)


def _countsketch_aggregates(cfg, seeds, records, signs) -> dict:
    n = len(records)
    adv = sum(r["adversarial"] for r in records)
    agg = {"adversarial": _rule(adv, math.ceil(0.8 * n), adv >= 0.8 * n)}
    if not cfg.controls or not n:
        return agg
    params = SketchParams(cfg.n, cfg.ell, cfg.b)
    fresh = derive_seeds(derive_seed(cfg.master_seed, _CONTROL), cfg.controls)
    bound = control_bound(cfg.r, cfg.m, cfg.ell, cfg.b)
    if cfg.random_subsets:
        ctl = np.empty((len(fresh), n))
        for q, (seed, s) in enumerate(zip(seeds, signs)):
            h, z = _rebuild(cfg, seed, s)
            ctl[:, q] = control_biases(params, [z], h, fresh)[:, 0]
    else:
        zs = [_rebuild(cfg, seed, s)[1] for seed, s in zip(seeds, signs)]
        stacked = stack_common_support(zs)
        del zs
        ctl = control_biases(params, None, 0, fresh, stacked=stacked)
    within = np.sum(np.abs(ctl) <= bound, axis=0)
    cmax = np.max(np.abs(ctl), axis=0)
    for rec, w, mx in zip(records, within, cmax):
        rec["control_within"] = int(w)
        rec["control_max_abs"] = float(mx)
    need = math.ceil(0.99 * len(fresh))
    worst = int(within.min())
    agg["control_within_bound"] = _rule(worst, need, worst >= need)
    sep = sum(r["mean_adjusted"] > r["control_max_abs"] for r in records)
    agg["separation"] = _rule(sep, math.ceil(0.9 * n), sep >= 0.9 * n)
    return agg


def _ams_aggregates(cfg, seeds, records, signs) -> dict:
    n = len(records)
    adv = sum(r["desk_adversarial"] for r in records)
    agg = {"adversarial": _rule(adv, math.ceil(0.8 * n), adv >= 0.8 * n)}
    if not cfg.controls or not n:
        return agg
    # fresh seed i checks the output of attack seed i mod n
    params = SketchParams(cfg.n, cfg.ell, cfg.b)
    fresh = derive_seeds(derive_seed(cfg.master_seed, _CONTROL), cfg.controls)
    band = 4 * math.sqrt(2 / cfg.ell)
    ratios = np.empty(len(fresh))
    for q in range(n):
        idx = list(range(q, len(fresh), n))
        if idx:
            z = _rebuild(cfg, seeds[q], signs[q])[1]
            ratios[idx] = ams_control_ratios(params, z, [fresh[i] for i in idx])
    inside = int(np.sum(np.abs(ratios - 1) <= band))
    need = math.ceil(0.99 * len(fresh))
    agg["control_within_band"] = _rule(inside, need, inside >= need)
    return agg


def _mean_aggregates(cfg, outputs) -> dict:
    if not outputs:
        return {}
    st = mean_attack_stats(outputs, cfg.a, cfg.c, cfg.g, cfg.sigma, cfg.ell, cfg.r)
    rel = st.emp_mean / st.pred_mean
    return {
        "mean_ratio": _rule(rel, [0.85, 1.15], 0.85 <= rel <= 1.15),
        "variance": _rule(st.emp_var, [0.8 * st.var_lo, 1.2 * st.var_hi], 0.8 * st.var_lo <= st.emp_var <= 1.2 * st.var_hi),
        "sq_norm": _rule(st.emp_sq_norm, 0.8 * st.sq_norm_lo, st.emp_sq_norm >= 0.8 * st.sq_norm_lo),
        "stats": st.as_dict(),
    }


def run_experiment(cfg: ExperimentConfig) -> RunReport:
    """Attack + verify every seed; raises GateFailure before any attack."""
    seeds = cfg.seed_list()
    gate_rep = _run_gate(cfg, seeds)
    if cfg.workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_seed_job, [cfg] * len(seeds), seeds))
    else:
        results = [_seed_job(cfg, s) for s in seeds]
    records = [r[0] for r in results]
    wall = [r[3] for r in results]
    for s, w in zip(seeds, wall):
        log.info("seed %d done in %.3fs", s, w)
    if cfg.mode == "mean_est":
        agg = _mean_aggregates(cfg, [r[2] for r in results])
    elif cfg.mode == "ams":
        agg = _ams_aggregates(cfg, seeds, records, [r[1] for r in results])
    else:
        agg = _countsketch_aggregates(cfg, seeds, records, [r[1] for r in results])
    if gate_rep is not None:
        agg["gate"] = {**gate_rep.as_dict(), "delta": cfg.delta}
    passed = all(v["pass"] for v in agg.values() if isinstance(v, dict) and "pass" in v)
    return RunReport(cfg.echo(), records, agg, bool(passed), wall)


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if v is None:
        return ""
    return str(v)


def render_report(report: RunReport, fmt: str = "json", timings: bool = False) -> str:
    if fmt == "json":
        return json.dumps(_jsonable(report.as_dict(timings)), indent=2, sort_keys=True, allow_nan=False) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["seed", "metric", "value"])
        for rec in report.records:
            for k, v in rec.items():
                if k != "seed":
                    w.writerow([rec["seed"], k, _fmt(v)])
        return buf.getvalue()
    raise ValueError(f"unknown format {fmt!r}")


def default_out_path(mode: str, fmt: str) -> Path | None:
    base = os.environ.get(OUT_ENV)
    return Path(base) / f"{mode}-report.{fmt}" if base else None


def emit_report(report: RunReport, fmt: str = "json", path=None, timings: bool = False) -> Path | None:
    """Write the report to ``path`` (stdout when None); returns the path written."""
    text = render_report(report, fmt, timings)
    if path is None:
        print(text, end="")
        return None
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as e:
        raise OSError(f"cannot write report to {path}: {e}") from e
    return path


def load_report(path) -> dict:
    return json.loads(Path(path).read_text())
