import numpy as np
import pytest

from hgtsme.stochastics import RngStream


@pytest.fixture
def rng():
    return RngStream(20240601)


def ks_distance(sample, cdf):
    """Two-sided Kolmogorov-Smirnov distance of ``sample`` against ``cdf``."""
    x = np.sort(np.asarray(sample, dtype=float))
    n = x.size
    F = cdf(x)
    return float(max(np.max(np.arange(1, n + 1) / n - F), np.max(F - np.arange(n) / n)))


# (criterion, passed, detail) rows filled in by test_acceptance
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid, ok, detail in sorted(ACCEPTANCE, key=lambda r: int(r[0][1:])):
        terminalreporter.write_line(f"{cid} {'PASS' if ok else 'FAIL'} {detail}")
