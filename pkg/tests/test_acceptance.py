"""Acceptance criteria at desk scale; each test prints one pass/fail line."""

import math
import time

import numpy as np
import pytest

from conftest import record_acceptance
from sketch_attack.attack import AttackConfig, universal_attack
from sketch_attack.estimators import CorrectnessParams, median_threshold_estimator
from sketch_attack.harness import ExperimentConfig, render_report, run_experiment
from sketch_attack.sketch import (
    SketchParams,
    SketchRandomness,
    SparseVector,
    adjusted_measurements,
    derive_seed,
    measurement_coefficients,
    sketch,
)
from sketch_attack.verification import gap_estimate, predicted_bias, predicted_gap, symmetry_check

MASTER = 2024  # for the direct Monte Carlo checks; harness runs use the CLI default seed


def hh_config(**kw):
    return ExperimentConfig(mode="countsketch_hh", ell=9, b=32, B=4, delta2=1e-3, n_seeds=20, **kw)


@pytest.fixture(scope="module")
def criterion1():
    t0 = time.perf_counter()
    rep = run_experiment(hh_config())
    return rep, time.perf_counter() - t0


def test_criterion_1_adversarial_success(criterion1):
    rep, secs = criterion1
    adv = sum(r["adversarial"] for r in rep.records)
    ok = adv >= 16 and rep.aggregates["gate"]["pass"]
    cfg = rep.config
    record_acceptance(1, "adversarial success", ok,
                      f"{adv}/20 seeds >= sqrt(B/b)||z_A|| (r={cfg['r']}, m={cfg['m']}, a={cfg['a']}, c={cfg['c']}), {secs:.1f}s")
    assert ok


def test_criterion_2_universality():
    counts = {}
    for kind in ("trimmed_mean", "random_threshold", "state_flipping"):
        rep = run_experiment(hh_config(estimator=kind, controls=0))
        counts[kind] = (sum(r["adversarial"] for r in rep.records), rep.aggregates["gate"]["pass"])
    ok = all(n >= 16 and g for n, g in counts.values())
    detail = ", ".join(f"{k}={n}/20{'' if g else ' (gate failed)'}" for k, (n, g) in counts.items())
    record_acceptance(2, "universality", ok, detail)
    assert ok


def test_criterion_3_control_separation(criterion1):
    rep, _ = criterion1
    worst = min(r["control_within"] for r in rep.records)
    sep = sum(r["mean_adjusted"] > r["control_max_abs"] for r in rep.records)
    ok = worst >= 99 and sep >= 18
    record_acceptance(3, "control separation", ok,
                      f"min within-bound {worst}/100 fresh seeds per z_A, attacked > max fresh |bias| in {sep}/20")
    assert ok


def test_criterion_4_mean_attack_expectation():
    t0 = time.perf_counter()
    rep = run_experiment(ExperimentConfig(mode="mean_est", ell=9, sigma=1.0, a=0.3, g=0.3, c=1.3, r=500, n_seeds=2000))
    ratio, var = rep.aggregates["mean_ratio"], rep.aggregates["variance"]
    ok = ratio["pass"] and var["pass"]
    lo, hi = var["threshold"]
    record_acceptance(4, "mean-attack expectation", ok,
                      f"mean/pred={ratio['value']:.3f}, var={var['value']:.2f} in [{lo:.2f}, {hi:.2f}], "
                      f"{time.perf_counter() - t0:.1f}s")
    assert ok


def test_criterion_5_reporting_gap():
    a, c, g, sigma, ell = 0.3, 1.3, 0.3, 1.0, 9
    f = median_threshold_estimator(CorrectnessParams(0.1, a, c, ell, sigma))
    ratios = []
    for i, alpha in enumerate((0.1, 0.2, 0.3)):
        gap = gap_estimate(f, alpha, a, c, g, sigma, ell, samples=1_000_000, seed=derive_seed(MASTER, 5, i))
        ratios.append(gap / predicted_gap(alpha, a, c, g))
    ok = all(abs(x - 1) <= 0.25 for x in ratios)
    record_acceptance(5, "reporting gap", ok, "gap/pred at alpha=0.1,0.2,0.3: " + ", ".join(f"{x:.3f}" for x in ratios))
    assert ok


def test_criterion_6_density_symmetry():
    rng = np.random.default_rng(derive_seed(MASTER, 6))
    worst = 0.0
    for _ in range(10_000):
        ell = int(rng.integers(1, 64))
        v, alpha, sigma = rng.uniform(-10, 10), rng.uniform(0, 2), rng.uniform(0.1, 5)
        d = rng.normal(size=ell)
        u = v + sigma * (d - d.mean())
        u -= u.mean() - v
        worst = max(worst, abs(symmetry_check(v, alpha, sigma, u)))
    ok = worst <= 1e-9
    record_acceptance(6, "density symmetry", ok, f"max |log f+ - log f-| = {worst:.2e} over 1e4 triples")
    assert ok


def test_criterion_7_tail_distribution():
    b, m, N = 32, 256 * 32, 10_000
    params = SketchParams(1 << 63, 1, b)
    keys = np.arange(1, m + 1, dtype=np.uint64)
    vals = np.random.default_rng(derive_seed(MASTER, 7)).choice([-1.0, 1.0], m)
    hits = np.empty(N)
    adj = np.empty(N)
    for i in range(N):
        rho = SketchRandomness(params, derive_seed(MASTER, 7, i))
        coeff = measurement_coefficients(rho, keys, 0)[0]
        hits[i] = np.count_nonzero(coeff)
        adj[i] = coeff @ vals
    mean_b, var_b = m / b, m / b * (1 - 1 / b)
    mean_ok = abs(hits.mean() - mean_b) <= 4 * math.sqrt(var_b / N)
    var_ok = abs(hits.var(ddof=1) / var_b - 1) <= 0.10
    adj_ok = abs(adj.var(ddof=1) / (m / b) - 1) <= 0.10
    ok = mean_ok and var_ok and adj_ok
    record_acceptance(7, "tail distribution", ok,
                      f"hits mean {hits.mean():.2f} vs {mean_b:.0f}, var ratio {hits.var(ddof=1) / var_b:.3f}, "
                      f"adjusted var ratio {adj.var(ddof=1) / (m / b):.3f}")
    assert ok


def test_criterion_8_ams_attack():
    t0 = time.perf_counter()
    rep = run_experiment(ExperimentConfig(mode="ams", ell=100, epsilon=0.5, xi=0.5, tau=1.0, r=1250, n_seeds=20))
    adv = sum(r["desk_adversarial"] for r in rep.records)
    band = rep.aggregates["control_within_band"]
    ok = adv >= 16 and band["pass"] and rep.aggregates["gate"]["pass"]
    ratios = sorted(r["ratio"] for r in rep.records)
    record_acceptance(8, "AMS attack", ok,
                      f"{adv}/20 ratios >= 1.25 (median {np.median(ratios):.3f}), control in band {band['value']}/100, "
                      f"{time.perf_counter() - t0:.1f}s")
    assert ok


def test_criterion_9_exactness_suite():
    rng = np.random.default_rng(derive_seed(MASTER, 9))
    failures = []
    params = SketchParams(1 << 40, 9, 16)
    for trial in range(100):
        rho = SketchRandomness(params, derive_seed(MASTER, 9, trial))
        ku, kv = rng.choice(10_000, size=(2, 40), replace=False) + 1
        u = SparseVector(ku, rng.normal(size=40))
        v = SparseVector(kv, rng.normal(size=40))
        al, be = rng.normal(size=2)
        lhs = sketch(rho, u * al + v * be).values
        rhs = al * sketch(rho, u).values + be * sketch(rho, v).values
        if np.max(np.abs(lhs - rhs)) > 1e-9 * (abs(al) * u.norm1() + abs(be) * v.norm1()):
            failures.append(("linearity", trial))
        if not np.all(adjusted_measurements(rho, sketch(rho, SparseVector.basis(0)), 0) == 1.0):
            failures.append(("basis", trial))
    cfg = AttackConfig.desk_scale(ell=9, b=8, r=40, m=256, seed=derive_seed(MASTER, 9))
    rho = SketchRandomness(cfg.params, 1)
    f = median_threshold_estimator(cfg.correctness())
    hh = universal_attack(rho, f, cfg, mode="hh", record=True)
    ip = universal_attack(rho, f, cfg, mode="ip", record=True)
    if not (np.array_equal(hh.s, ip.s) and all(np.array_equal(x, y) for x, y in zip(hh.transcript, ip.transcript))):
        failures.append(("ip/hh trace", 0))
    if hh.z_A.norm_sq() != cfg.r * cfg.m or hh.z_A[hh.h] != 0.0:
        failures.append(("norm identity", 0))
    per_tail = np.array([adjusted_measurements(rho, sketch(rho, z), hh.h).mean() for z in hh.tails.tails])
    lhs = adjusted_measurements(rho, sketch(rho, hh.z_A), hh.h).mean()
    if abs(lhs - float(hh.s @ per_tail)) > 1e-9:
        failures.append(("signed tail sum", 0))
    ok = not failures
    record_acceptance(9, "linearity/exactness", ok, f"{len(failures)} failures" + (f": {failures[:3]}" if failures else ""))
    assert ok


def test_criterion_10_determinism(criterion1):
    rep, _ = criterion1
    again = run_experiment(hh_config())
    same_json = render_report(again) == render_report(rep)
    same_csv = render_report(again, "csv") == render_report(rep, "csv")
    ok = same_json and same_csv
    record_acceptance(10, "determinism", ok, f"json identical={same_json}, csv identical={same_csv}")
    assert ok


def test_predicted_bias_vs_threshold_at_criterion1():
    cfg = AttackConfig.desk_scale()
    pred = predicted_bias(cfg.r, 9, cfg.sigma, cfg.a, cfg.c, cfg.g)
    thr = math.sqrt(4 / 32) * math.sqrt(cfg.r * cfg.m)
    assert pred == pytest.approx(2 / (cfg.c + cfg.a) * thr)
