"""Is an attack output adversarial, and does its bias match the predictions?

Predicted quantities depend on config values only. Reports are pure
functions of (randomness, vector, config).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .estimators import ReportingFunction
from .sketch import (
    ModeError,
    SketchParams,
    SketchRandomness,
    SparseVector,
    adjusted_measurements,
    ams_row_norms,
    batch_adjusted_measurements,
    sketch,
)


class VerificationError(ValueError):
    pass


def predicted_bias(r: int, ell: int, sigma: float, a: float, c: float, g: float) -> float:
    """(r/ell) * 2 sigma / (c - a + 2g); equals (r/ell) 2 sigma / (c + a) when g = a."""
    return r / ell * 2.0 * sigma / (c - a + 2.0 * g)


def predicted_gap(alpha: float, a: float, c: float, g: float) -> float:
    return 2.0 * alpha / (c - a + 2.0 * g)


def control_bound(r: int, m: int, ell: int, b: int) -> float:
    """4 standard deviations of the mean adjusted measurement under fresh randomness."""
    return 4.0 * math.sqrt(r * m / (ell * b))


@dataclass
class BiasReport:
    mean_adjusted: float
    threshold: float
    norm: float
    B: float
    adversarial: bool
    predicted_mean: float | None = None
    predicted_var: float | None = None

    def as_dict(self):
        return asdict(self)


def bias_under(rho: SketchRandomness, z: SparseVector, h: int, B: float, cfg=None) -> BiasReport:
    """Mean adjusted measurement of h on z, against the threshold sqrt(B/b) ||z||.

    The zero vector is never adversarial. ``cfg`` (an AttackConfig) attaches the predicted mean and variance.
    """
    if h in z:
        raise VerificationError(f"key {h} lies in the support of z")
    if B <= 0:
        raise VerificationError("need B > 0")
    mean_adj = float(np.mean(adjusted_measurements(rho, sketch(rho, z), h)))
    norm = z.norm()
    threshold = math.sqrt(B / rho.params.b) * norm
    rep = BiasReport(mean_adj, threshold, norm, B, bool(norm > 0 and mean_adj >= threshold))
    if cfg is not None:
        ell = rho.params.ell
        rep.predicted_mean = predicted_bias(cfg.r, ell, cfg.sigma, cfg.a, cfg.c, cfg.g)
        rep.predicted_var = cfg.r / ell * cfg.sigma ** 2
    return rep


def stack_common_support(zs, compact: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """(keys, values[q, N]) over the union of supports (zeros fill the gaps).

    With ``compact`` the matrix is int8 when every value is a small integer,
    which is the case for CountSketch attack outputs.
    """
    zs = list(zs)
    keys = np.unique(np.concatenate([z.keys for z in zs])) if zs else np.empty(0, np.uint64)
    small = compact and all(np.all(np.abs(z.values) <= 127) and np.all(z.values == np.round(z.values)) for z in zs)
    values = np.zeros((len(zs), keys.size), dtype=np.int8 if small else np.float64)
    for q, z in enumerate(zs):
        values[q, np.searchsorted(keys, z.keys)] = z.values
    return keys, values


def control_biases(params: SketchParams, zs, h: int, seeds, stacked=None) -> np.ndarray:
    """Mean adjusted measurement of h for each z under each fresh seed.

    Returns shape ``(len(seeds), len(zs))``. ``stacked`` may supply a
    precomputed ``(keys, values)`` pair in place of ``zs``.
    """
    keys, values = stacked if stacked is not None else stack_common_support(zs)
    out = np.empty((len(seeds), values.shape[0]))
    for i, s in enumerate(seeds):
        rho = SketchRandomness(params, s)
        out[i] = batch_adjusted_measurements(rho, keys, values, h).mean(axis=1)
    return out


@dataclass
class Separation:
    attacked: np.ndarray
    control_max: float
    exceed: int

    @property
    def fraction(self) -> float:
        return self.exceed / max(1, self.attacked.size)


def separation(attacked_biases, control) -> Separation:
    """How many attacked biases exceed the largest fresh-seed |bias|."""
    attacked = np.asarray(attacked_biases, dtype=float)
    cmax = float(np.max(np.abs(control))) if np.size(control) else 0.0
    return Separation(attacked, cmax, int(np.sum(attacked > cmax)))


@dataclass
class AmsBiasReport:
    mean_sq: float
    norm_sq: float
    ratio: float
    xi_target: float
    adversarial: bool

    def as_dict(self):
        return asdict(self)


def ams_bias_under(rho: SketchRandomness, z: SparseVector, xi: float) -> AmsBiasReport:
    if rho.params.b != 1:
        raise ModeError(f"AMS bias needs b = 1, got b = {rho.params.b}")
    norm_sq = z.norm_sq()
    if norm_sq == 0:
        raise VerificationError("zero vector has no norm ratio")
    mean_sq = float(np.mean(ams_row_norms(sketch(rho, z))))
    ratio = mean_sq / norm_sq
    return AmsBiasReport(mean_sq, norm_sq, ratio, xi, bool(mean_sq >= (1 + xi) * norm_sq))


def ams_control_ratios(params: SketchParams, z: SparseVector, seeds) -> np.ndarray:
    return np.array([ams_bias_under(SketchRandomness(params, s), z, 0.0).ratio for s in seeds])


@dataclass
class MeanAttackStats:
    emp_mean: float
    emp_var: float
    pred_mean: float
    var_lo: float
    var_hi: float
    emp_sq_norm: float
    sq_norm_lo: float
    runs: int

    def as_dict(self):
        return asdict(self)


def mean_attack_stats(runs, a: float, c: float, g: float, sigma: float, ell: int, r: int) -> MeanAttackStats:
    """Moments of mean(u_A) over independent runs, with their predicted bands.

    ``emp_sq_norm`` is the average of ||u_A||^2 / ell; its lower bound uses
    2 sqrt(2/pi) as the constant of the 1/sqrt(ell) correction.
    """
    runs = list(runs)
    if len(runs) < 100:
        raise VerificationError(f"need at least 100 runs, got {len(runs)}")
    ubar = np.array([o.u_A.mean() for o in runs])
    sq = np.array([o.u_A @ o.u_A / ell for o in runs])
    w = c - a + 2 * g
    hi = r / ell * sigma ** 2
    return MeanAttackStats(
        emp_mean=float(ubar.mean()),
        emp_var=float(ubar.var(ddof=1)),
        pred_mean=predicted_bias(r, ell, sigma, a, c, g),
        var_lo=hi * (1 - 2 * g / w) ** 2,
        var_hi=hi,
        emp_sq_norm=float(sq.mean()),
        sq_norm_lo=r * sigma ** 2 * (1 - 2 * math.sqrt(2 / math.pi) / math.sqrt(ell)),
        runs=len(runs),
    )


def gap_estimate(
    p: ReportingFunction,
    alpha: float,
    a: float,
    c: float,
    g: float,
    sigma: float,
    ell: int,
    samples: int = 1_000_000,
    seed: int = 0,
    chunk: int = 250_000,
) -> float:
    """Monte Carlo E_v[pi(v | alpha) - pi(v | -alpha)], v ~ U[a sigma, (c+2g) sigma].

    Both sides share v and the deviation Delta = G - mean(G) with
    G ~ N_ell(0, sigma^2); projecting out the mean gives exactly the law of
    the deviations conditioned on their mean.
    """
    if not 0 < alpha <= g:
        raise VerificationError(f"need 0 < alpha <= g = {g}, got {alpha}")
    if samples < 100_000:
        raise VerificationError("gap_estimate needs at least 1e5 samples")
    rng = np.random.default_rng(seed)
    total, done = 0.0, 0
    while done < samples:
        k = min(chunk, samples - done)
        v = rng.uniform(a * sigma, (c + 2 * g) * sigma, size=k)
        G = sigma * rng.standard_normal((k, ell))
        D = G - G.mean(axis=1, keepdims=True)
        up = p.probabilities((v + alpha * sigma)[:, None] + D)
        dn = p.probabilities((v - alpha * sigma)[:, None] + D)
        total += float(np.sum(up - dn))
        done += k
    return total / samples


def log_normal_density(u, mean: float, sigma: float) -> float:
    """log prod_j N(u_j; mean, sigma^2)."""
    u = np.asarray(u, dtype=float)
    return float(-0.5 * np.sum(((u - mean) / sigma) ** 2) - u.size * math.log(sigma * math.sqrt(2 * math.pi)))


def symmetry_check(v: float, alpha: float, sigma: float, u, strict: bool = True) -> float:
    """log f_{v + alpha sigma}(u) - log f_{v - alpha sigma}(u).

    Zero whenever mean(u) = v; in general it equals 2 alpha ell (mean(u) - v) / sigma.
    ``strict=False`` skips the mean(u) = v precondition.
    """
    u = np.asarray(u, dtype=float)
    if strict and abs(u.mean() - v) > 1e-12 * max(1.0, abs(v)):
        raise VerificationError("mean(u) differs from v")
    return log_normal_density(u, v + alpha * sigma, sigma) - log_normal_density(u, v - alpha * sigma, sigma)
