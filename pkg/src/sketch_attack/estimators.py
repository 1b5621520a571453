"""Query-response side: reporting functions and a Monte Carlo correctness check.

A reporting function maps the ell values the sketch exposes about the queried
key (its adjusted measurements, or the squared rows of an AMS sketch) to the
probability that the key is reported. Every function here works on a batch
``U`` of shape ``(..., ell)`` and treats the leading rows as consecutive
queries, so stateful rules advance exactly as they would one call at a time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.stats import trim_mean


class EstimatorError(ValueError):
    pass


def median_estimate(adj) -> float:
    """Median of the adjusted measurements (mean of the middle two for even ell)."""
    adj = np.asarray(adj, dtype=float)
    if adj.size == 0:
        raise EstimatorError("median of an empty measurement vector")
    return float(np.median(adj))


@dataclass(frozen=True)
class CorrectnessParams:
    """Thresholds of a correct reporting function, in units of sigma.

    Correct means E[p(u)] >= 1 - delta for u ~ N_ell(v, sigma^2) when
    v >= c * sigma, and E[p(u)] <= delta when v <= a * sigma.
    """

    delta: float
    a: float
    c: float
    ell: int
    sigma: float

    def __post_init__(self):
        if not 0 < self.a < self.c:
            raise EstimatorError(f"need 0 < a < c, got a={self.a}, c={self.c}")
        if not 0 < self.delta < 0.5:
            raise EstimatorError(f"need 0 < delta < 1/2, got {self.delta}")
        if self.sigma <= 0 or self.ell < 1:
            raise EstimatorError("need sigma > 0 and ell >= 1")

    @property
    def theta(self) -> float:
        """Midpoint threshold (a + c) / 2."""
        return 0.5 * (self.a + self.c)


def heavy_hitter_c(b: int, epsilon: float) -> float:
    """Smallest c with |v_h| >= c * sigma implying h is an l2-eps heavy hitter.

    For query vectors v_h e_h + z with ||z||^2 = m = b sigma^2.
    """
    return math.sqrt(b * epsilon / (1.0 - epsilon))


def heavy_hitter_thresholds(ell: int, b: int, epsilon: float | None = None, delta2: float = 1e-3):
    """(a, c, delta) from the explicit expressions inside the Theta bounds.

    a = sqrt(ln(1/delta2) / ell), c = sqrt(b eps / (1 - eps)) with eps = 1/b by
    default, delta = delta2 ** (1/4). At small ell these give c - a far below
    the spread of any ell-sample location estimate; see the desk-scale
    defaults in :mod:`sketch_attack.attack`.
    """
    if epsilon is None:
        epsilon = 1.0 / b
    a = math.sqrt(math.log(1.0 / delta2) / ell)
    return a, heavy_hitter_c(b, epsilon), delta2 ** 0.25


def is_heavy_hitter(v, key: int, epsilon: float) -> bool:
    """l2-eps heavy hitter test: v_key^2 >= eps * ||v||^2."""
    return v[key] ** 2 >= epsilon * v.norm_sq()


class ReportingFunction:
    """Base class. Subclasses implement :meth:`probabilities`."""

    name = "reporting-function"

    def probabilities(self, U: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, u) -> float:
        u = np.asarray(u, dtype=float)
        return float(self.probabilities(u[None, :])[0])

    def observe(self, u: np.ndarray, reported: bool) -> None:
        """Feedback hook, called after every answered query. Default: ignore."""

    @property
    def uses_feedback(self) -> bool:
        return type(self).observe is not ReportingFunction.observe

    def decide(self, u, rng: np.random.Generator) -> int:
        """Draw the +-1 decision for one query."""
        return 1 if rng.random() < self(u) else -1


class Constant(ReportingFunction):
    def __init__(self, p: float):
        if not 0.0 <= p <= 1.0:
            raise EstimatorError("constant probability outside [0, 1]")
        self.p = float(p)
        self.name = f"constant-{p:g}"

    def probabilities(self, U):
        return np.full(np.shape(U)[:-1], self.p)


class _LocationThreshold(ReportingFunction):
    """Report iff |location(u)| >= theta * sigma."""

    def __init__(self, params: CorrectnessParams, theta: float | None = None):
        self.params = params
        self.theta = params.theta if theta is None else theta

    def location(self, U):
        raise NotImplementedError

    def probabilities(self, U):
        stat = np.abs(self.location(np.asarray(U, dtype=float)))
        return (stat >= self.theta * self.params.sigma).astype(float)


class MedianThreshold(_LocationThreshold):
    name = "median_threshold"

    def location(self, U):
        return np.median(U, axis=-1)


class TrimmedMeanThreshold(_LocationThreshold):
    name = "trimmed_mean"

    def location(self, U):
        return trim_mean(U, 0.2, axis=-1)


class RandomThreshold(ReportingFunction):
    """Thresholds |mean(u)| at a fresh theta ~ U[a + w/10, c - w/10] per query."""

    name = "random_threshold"

    def __init__(self, params: CorrectnessParams, seed: int = 0):
        self.params = params
        self.rng = np.random.default_rng(seed)
        w = params.c - params.a
        self.lo, self.hi = params.a + 0.1 * w, params.c - 0.1 * w

    def probabilities(self, U):
        U = np.asarray(U, dtype=float)
        stat = np.abs(U.mean(axis=-1))
        theta = self.rng.uniform(self.lo, self.hi, size=stat.shape)
        return (stat >= theta * self.params.sigma).astype(float)


class StateFlipping(ReportingFunction):
    """Alternates median- and mean-threshold rules on query parity."""

    name = "state_flipping"

    def __init__(self, params: CorrectnessParams):
        self.params = params
        self.count = 0

    def probabilities(self, U):
        U = np.asarray(U, dtype=float)
        flat = U.reshape(-1, U.shape[-1])
        parity = (self.count + np.arange(flat.shape[0])) % 2
        self.count += flat.shape[0]
        loc = np.where(parity == 0, np.median(flat, axis=-1), flat.mean(axis=-1))
        out = np.abs(loc) >= self.params.theta * self.params.sigma
        return out.astype(float).reshape(U.shape[:-1])


def median_threshold_estimator(params: CorrectnessParams) -> MedianThreshold:
    return MedianThreshold(params)


ESTIMATOR_KINDS = ("median_threshold", "trimmed_mean", "random_threshold", "state_flipping")


def randomized_estimator_family(kind: str, params: CorrectnessParams, seed: int = 0) -> ReportingFunction:
    """Correct-by-construction alternatives to the median rule."""
    if kind == "median_threshold":
        return MedianThreshold(params)
    if kind == "trimmed_mean":
        return TrimmedMeanThreshold(params)
    if kind == "random_threshold":
        return RandomThreshold(params, seed)
    if kind == "state_flipping":
        return StateFlipping(params)
    raise EstimatorError(f"unknown estimator kind {kind!r}; choose from {ESTIMATOR_KINDS}")


class MeanOfSquaresNorm(ReportingFunction):
    """AMS norm test: +1 iff the mean squared row is >= (1 + eps/2) tau^2.

    Input rows are the squared measurements <mu^(j), v>^2.
    """

    name = "mean_of_squares"

    def __init__(self, tau: float, epsilon: float):
        self.tau, self.epsilon = tau, epsilon
        self.cutoff = (1.0 + epsilon / 2.0) * tau * tau

    def probabilities(self, U):
        return (np.asarray(U, dtype=float).mean(axis=-1) >= self.cutoff).astype(float)


def norm_estimator(tau: float, epsilon: float, mode: str = "mean_of_squares") -> MeanOfSquaresNorm:
    if tau <= 0 or epsilon <= 0:
        raise EstimatorError("need tau > 0 and epsilon > 0")
    if mode != "mean_of_squares":
        raise EstimatorError(f"unknown norm estimator mode {mode!r}")
    return MeanOfSquaresNorm(tau, epsilon)


@dataclass
class CorrectnessReport:
    rate_at_c: float
    rate_at_a: float
    passed: bool
    trials: int

    def as_dict(self):
        return {"rate_at_c": self.rate_at_c, "rate_at_a": self.rate_at_a, "pass": self.passed, "trials": self.trials}


def verify_correctness(
    f: ReportingFunction,
    params: CorrectnessParams,
    trials: int = 10_000,
    seed: int = 0,
    view: Callable[[np.ndarray], np.ndarray] | None = None,
) -> CorrectnessReport:
    """Estimate E[p(u)] at v = c*sigma and v = a*sigma with u ~ N_ell(v, sigma^2).

    Passes iff rate_at_c >= 1 - delta - 3 se and rate_at_a <= delta + 3 se,
    se being the binomial standard error at the observed rate. ``view`` maps
    u before it reaches ``f`` (``np.square`` for AMS norm estimators).
    """
    if trials < 1000:
        raise EstimatorError("verify_correctness needs at least 1000 trials")
    rng = np.random.default_rng(seed)
    ell, sigma = params.ell, params.sigma
    view = view or (lambda x: x)

    def rate(v):
        U = v + sigma * rng.standard_normal((trials, ell))
        return float(np.mean(f.probabilities(view(U))))

    rc = rate(params.c * sigma)
    ra = rate(params.a * sigma)
    se_c = math.sqrt(rc * (1 - rc) / trials)
    se_a = math.sqrt(ra * (1 - ra) / trials)
    ok = rc >= 1 - params.delta - 3 * se_c and ra <= params.delta + 3 * se_a
    return CorrectnessReport(rc, ra, ok, trials)


def recover_candidates(rho, sk, candidates, f: ReportingFunction, rng=None) -> list[int]:
    """Candidate-set heavy-hitter recovery: keys of ``candidates`` that ``f`` reports."""
    from .sketch import adjusted_measurements

    rng = rng or np.random.default_rng(0)
    out = []
    for key in candidates:
        if f.decide(adjusted_measurements(rho, sk, int(key)), rng) == 1:
            out.append(int(key))
    return out
