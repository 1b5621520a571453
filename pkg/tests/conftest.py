import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from scipy.stats import binom, norm

settings.register_profile("default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES = []


def record_acceptance(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def median_report_rate(v: float, theta: float, ell: int, sigma: float = 1.0) -> float:
    """Exact P(|median of ell N(v, sigma^2) draws| >= theta), odd ell."""
    k = (ell + 1) // 2
    p_hi = norm.sf((theta - v) / sigma)
    p_lo = norm.cdf((-theta - v) / sigma)
    return float(binom.sf(k - 1, ell, p_hi) + binom.sf(k - 1, ell, p_lo))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
