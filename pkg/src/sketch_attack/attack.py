"""Universal attacks on CountSketch / AMS estimators.

The attacker draws a heavy key h and r disjoint random tails up front, asks
whether h is reported for each query v_h e_h + z_t, and returns the signed
tail sum z_A = sum_t s_t z_t. Only report bits cross from the oracle back to
the attacker; the sketch randomness and the sketches stay inside the oracle.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .estimators import CorrectnessParams, CorrectnessReport, ReportingFunction, verify_correctness
from .sketch import (
    ModeError,
    SketchParams,
    SketchRandomness,
    SparseVector,
    adjusted_measurements,
    ams_row_norms,
    derive_seed,
    inner_product_estimates,
    sketch,
)

# Desk-scale thresholds for the CountSketch attack (units of sigma). At
# ell = 9 the literal asymptotic expressions give c - a ~ 0.14, narrower than the
# spread of any 9-sample location estimate; these keep c above the
# heavy-hitter bound sqrt(b eps / (1 - eps)) ~ 1.016 for eps = 1/b and leave
# room for correct estimators at delta = delta2 ** (1/4).
DESK_A = 0.2
DESK_C = 1.1

Responder = Union[ReportingFunction, Callable[[int], ReportingFunction]]

# stream ids for derive_seed(cfg.seed, stream)
_TAILS, _VALUES, _COINS, _NOISE, _GATE = range(5)


class AttackError(ValueError):
    pass


class GateFailure(AttackError):
    """The responder's estimator failed the pre-run correctness check."""

    def __init__(self, msg: str, report: CorrectnessReport):
        super().__init__(msg)
        self.report = report


@dataclass(frozen=True)
class TailSet:
    h: int
    tails: tuple
    m: int

    @property
    def r(self) -> int:
        return len(self.tails)

    def combine(self, s) -> SparseVector:
        """sum_t s_t z_t (supports are disjoint)."""
        return SparseVector.concat_disjoint(self.tails, np.asarray(s, dtype=float))


def _distinct_random_keys(rng, n: int, count: int, exclude: int) -> np.ndarray:
    if n <= 4 * (count + 1):
        pool = np.arange(n, dtype=np.uint64)
        pool = pool[pool != np.uint64(exclude)]
        return rng.permutation(pool)[:count]
    got = np.empty(0, dtype=np.uint64)
    while got.size < count:
        draw = rng.integers(0, n - 1, size=2 * (count - got.size) + 16, dtype=np.uint64, endpoint=True)
        draw = draw[draw != np.uint64(exclude)]
        merged = np.concatenate([got, draw])
        _, first = np.unique(merged, return_index=True)
        got = merged[np.sort(first)]
    return got[:count]


def attack_tails(n: int, m: int, r: int, seed: int = 0, random_subsets: bool = False, scale: float = 1.0) -> TailSet:
    """Heavy key h plus r Rademacher tails of support m, disjoint and avoiding h.

    By default h = 0 and tail t occupies keys 1 + t*m ... (t+1)*m; with
    idealized per-key hashing this has the same law as random subsets.
    ``random_subsets=True`` draws h and the supports uniformly instead.
    """
    if m < 1 or r < 0:
        raise AttackError("need m >= 1 and r >= 0")
    if n <= r * m + 1:
        raise AttackError(f"key space exhausted: n = {n} <= r*m + 1 = {r * m + 1}")
    rng = np.random.default_rng(derive_seed(seed, _TAILS))
    if random_subsets:
        h = int(rng.integers(0, n - 1, dtype=np.uint64, endpoint=True))
        keys = _distinct_random_keys(rng, n, r * m, h).reshape(r, m)
    else:
        h = 0
        keys = (1 + np.arange(r * m, dtype=np.uint64)).reshape(r, m)
    signs = (2 * rng.integers(0, 2, size=(r, m)) - 1) * float(scale)
    return TailSet(h, tuple(SparseVector(keys[t], signs[t]) for t in range(r)), m)


@dataclass(frozen=True)
class AttackConfig:
    """Parameters of the CountSketch attack.

    ``g`` is the guard width that extends the sampling interval of v_h to
    [a sigma, (c + 2g) sigma]. ``sigma`` defaults to sqrt(m / b); ``delta``
    (the correctness level checked by the gate) to delta2 ** (1/4).
    """

    params: SketchParams
    r: int
    m: int
    a: float = DESK_A
    c: float = DESK_C
    g: float | None = None
    sigma: float | None = None
    delta2: float = 1e-3
    delta: float | None = None
    seed: int = 0
    random_subsets: bool = False

    def __post_init__(self):
        if self.g is None:
            object.__setattr__(self, "g", self.a)
        if self.sigma is None:
            object.__setattr__(self, "sigma", math.sqrt(self.m / self.params.b))
        if self.delta is None:
            object.__setattr__(self, "delta", self.delta2 ** 0.25)
        if self.r < 1:
            raise AttackError("need r >= 1")
        if not 0 < self.g <= self.a < self.c:
            raise AttackError(f"need 0 < g <= a < c, got g={self.g}, a={self.a}, c={self.c}")
        if not math.isclose(self.sigma ** 2, self.m / self.params.b, rel_tol=1e-9):
            raise AttackError("sigma must equal sqrt(m / b)")

    @classmethod
    def desk_scale(cls, ell: int = 9, b: int = 32, B: float = 4, seed: int = 0, n: int = 1 << 63, **kw):
        """r = B ell^2, m = 256 b, thresholds DESK_A / DESK_C unless overridden."""
        m = kw.pop("m", 256 * b)
        r = kw.pop("r", int(round(B * ell * ell)))
        return cls(SketchParams(n, ell, b), r=r, m=m, seed=seed, **kw)

    @property
    def width(self) -> float:
        return self.c - self.a + 2 * self.g

    def correctness(self) -> CorrectnessParams:
        return CorrectnessParams(self.delta, self.a, self.c, self.params.ell, self.sigma)


@dataclass
class AttackTrace:
    """Per-query values v_h and report bits s, plus the adversarial input."""

    mode: str
    h: int
    v_h: np.ndarray
    s: np.ndarray
    z_A: SparseVector
    tails: TailSet
    sigma: float
    a: float
    c: float
    g: float
    transcript: list | None = field(default=None, repr=False)

    @property
    def r(self) -> int:
        return int(self.s.size)


def as_responder(responder: Responder) -> Callable[[int], ReportingFunction]:
    if isinstance(responder, ReportingFunction):
        return lambda t: responder
    if callable(responder):
        return responder
    raise AttackError("responder must be a ReportingFunction or a callable t -> ReportingFunction")


def gate(responder: Responder, params: CorrectnessParams, trials: int = 4000, seed: int = 0, view=None):
    """Check the responder's first estimator (on a copy, leaving its state alone)."""
    f = copy.deepcopy(as_responder(responder)(0))
    report = verify_correctness(f, params, trials=trials, seed=seed, view=view)
    if not report.passed:
        raise GateFailure(
            f"estimator {getattr(f, 'name', f)!r} is not correct at delta={params.delta:g}, "
            f"a={params.a:g}, c={params.c:g}: rate@c={report.rate_at_c:.4f}, rate@a={report.rate_at_a:.4f}",
            report,
        )
    return report


class SketchOracle:
    """Query-response algorithm wrapping a sketch with fixed randomness.

    ``mode`` picks what the estimator sees: ``"hh"`` the adjusted measurements
    of the queried key, ``"ip"`` the per-row inner-product estimates with
    e_key, ``"ams"`` the squared rows.
    """

    def __init__(self, rho: SketchRandomness, responder: Responder, mode: str = "hh", coin_seed: int = 0, record: bool = False):
        if mode not in ("hh", "ip", "ams"):
            raise AttackError(f"unknown oracle mode {mode!r}")
        if mode == "ams" and rho.params.b != 1:
            raise ModeError("AMS oracle needs b = 1")
        self.rho = rho
        self.mode = mode
        self._choose = as_responder(responder)
        self._coins = np.random.default_rng(coin_seed)
        self._t = 0
        self.transcript = [] if record else None

    def _view(self, v: SparseVector, key: int) -> np.ndarray:
        sk = sketch(self.rho, v)
        if self.mode == "hh":
            return adjusted_measurements(self.rho, sk, key)
        if self.mode == "ip":
            return inner_product_estimates(sketch(self.rho, SparseVector.basis(key)), sk)
        return ams_row_norms(sk)

    def query(self, v: SparseVector, key: int) -> bool:
        u = self._view(v, key)
        f = self._choose(self._t)
        reported = bool(self._coins.random() < f(u))
        f.observe(u, reported)
        if self.transcript is not None:
            self.transcript.append(u)
        self._t += 1
        return reported


def attack_queries(cfg: AttackConfig) -> tuple[TailSet, np.ndarray]:
    """The non-adaptive query sequence: tails and heavy values, from the seed alone."""
    tails = attack_tails(cfg.params.n, cfg.m, cfg.r, cfg.seed, cfg.random_subsets)
    rng = np.random.default_rng(derive_seed(cfg.seed, _VALUES))
    v_h = rng.uniform(cfg.a * cfg.sigma, (cfg.c + 2 * cfg.g) * cfg.sigma, size=cfg.r)
    return tails, v_h


def _run_queries(oracle: SketchOracle, tails: TailSet, v_h: np.ndarray) -> np.ndarray:
    s = np.empty(tails.r, dtype=np.int8)
    for t, z in enumerate(tails.tails):
        query = SparseVector.concat_disjoint([SparseVector.basis(tails.h, v_h[t]), z])
        s[t] = 1 if oracle.query(query, tails.h) else -1
    return s


def universal_attack(
    rho: SketchRandomness,
    responder: Responder,
    cfg: AttackConfig,
    mode: str = "hh",
    check: bool = True,
    gate_trials: int = 4000,
    record: bool = False,
) -> AttackTrace:
    """Attack a heavy-hitter (``mode="hh"``) or inner-product (``"ip"``) estimator."""
    if mode not in ("hh", "ip"):
        raise AttackError("universal_attack mode must be 'hh' or 'ip'")
    if rho.params != cfg.params:
        raise AttackError("randomness and attack config disagree on sketch params")
    if check:
        gate(responder, cfg.correctness(), trials=gate_trials, seed=derive_seed(cfg.seed, _GATE))
    tails, v_h = attack_queries(cfg)
    oracle = SketchOracle(rho, responder, mode, derive_seed(cfg.seed, _COINS), record)
    s = _run_queries(oracle, tails, v_h)
    return AttackTrace(mode, tails.h, v_h, s, tails.combine(s), tails, cfg.sigma, cfg.a, cfg.c, cfg.g, oracle.transcript)


@dataclass
class MeanAttackOutput:
    u_A: np.ndarray
    v: np.ndarray
    s: np.ndarray
    alpha_bar: np.ndarray

    @property
    def u_bar(self) -> float:
        return float(self.u_A.mean())


def bias_margin(ell: int, a: float, c: float, g: float) -> float:
    """sqrt(ell/2pi) exp(-ell g^2/2) * (c - a + 2g); the guard condition wants this << 1."""
    return math.sqrt(ell / (2 * math.pi)) * math.exp(-ell * g * g / 2) * (c - a + 2 * g)


def mean_est_attack(responder: Responder, a: float, c: float, g: float, sigma: float, ell: int, r: int, seed: int = 0) -> MeanAttackOutput:
    """Mean-estimation attack on i.i.d. Gaussian samples.

    v_t ~ U[a sigma, (c + 2g) sigma], u*_t ~ N_ell(0, sigma^2), the responder
    sees u_t = v_t + u*_t, and the output is u_A = sum_t s_t u*_t.
    """
    if not 0 < g <= a < c:
        raise AttackError(f"need 0 < g <= a < c, got g={g}, a={a}, c={c}")
    if r < 0:
        raise AttackError("need r >= 0")
    v = np.random.default_rng(derive_seed(seed, _VALUES)).uniform(a * sigma, (c + 2 * g) * sigma, size=r)
    ustar = sigma * np.random.default_rng(derive_seed(seed, _NOISE)).standard_normal((r, ell))
    coins = np.random.default_rng(derive_seed(seed, _COINS)).random(r)
    U = v[:, None] + ustar
    if isinstance(responder, ReportingFunction) and not responder.uses_feedback:
        s = np.where(coins < responder.probabilities(U), 1, -1).astype(np.int8)
    else:
        choose = as_responder(responder)
        s = np.empty(r, dtype=np.int8)
        for t in range(r):
            f = choose(t)
            reported = bool(coins[t] < f(U[t]))
            f.observe(U[t], reported)
            s[t] = 1 if reported else -1
    u_A = s.astype(float) @ ustar if r else np.zeros(ell)
    return MeanAttackOutput(u_A, v, s, ustar.mean(axis=1) / sigma)


def ams_guard_width(ell: int, epsilon: float, a: float = 1.0) -> float:
    return min(a, math.log(math.sqrt(ell / epsilon)) / math.sqrt(ell))


def ams_attack(
    rho: SketchRandomness,
    responder: Responder,
    tau: float,
    epsilon: float,
    r: int,
    m: int = 256,
    seed: int = 0,
    delta: float = 0.1,
    check: bool = True,
    gate_trials: int = 4000,
    random_subsets: bool = False,
    record: bool = False,
) -> AttackTrace:
    """Attack an AMS norm estimator (sketch with b = 1).

    sigma = tau / sqrt(2), a = 1, c = sqrt(1 + 2 eps); tails are rescaled to
    norm sigma, so ||z_A||^2 = r sigma^2.
    """
    ell = rho.params.ell
    if rho.params.b != 1:
        raise ModeError(f"AMS attack needs b = 1, got b = {rho.params.b}")
    if epsilon < 1 / math.sqrt(ell):
        raise AttackError(f"epsilon = {epsilon} below the 1/sqrt(ell) = {1 / math.sqrt(ell):.3g} feasibility scale")
    if r < 1:
        raise AttackError("need r >= 1")
    sigma = tau / math.sqrt(2)
    a, c = 1.0, math.sqrt(1 + 2 * epsilon)
    g = ams_guard_width(ell, epsilon, a)
    if check:
        params = CorrectnessParams(delta, a, c, ell, sigma)
        gate(responder, params, trials=gate_trials, seed=derive_seed(seed, _GATE), view=np.square)
    tails = attack_tails(rho.params.n, m, r, seed, random_subsets, scale=sigma / math.sqrt(m))
    v_h = np.random.default_rng(derive_seed(seed, _VALUES)).uniform(a * sigma, (c + 2 * g) * sigma, size=r)
    oracle = SketchOracle(rho, responder, "ams", derive_seed(seed, _COINS), record)
    s = _run_queries(oracle, tails, v_h)
    return AttackTrace("ams", tails.h, v_h, s, tails.combine(s), tails, sigma, a, c, g, oracle.transcript)
