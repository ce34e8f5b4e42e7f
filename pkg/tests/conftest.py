import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from committee_lab.estimators import wilson_interval

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def within_wilson(successes, trials, p):
    lo, hi = wilson_interval(successes, trials)
    return lo <= p <= hi


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
