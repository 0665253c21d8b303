import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "repo",
    deadline=None,
    max_examples=int(os.environ.get("HYPOTHESIS_EXAMPLES", 25)),
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")


@pytest.fixture
def symmetric_levy():
    from volterra_control.paths import LevyMeasureSpec

    return LevyMeasureSpec(1.0, ((0.5, 0.5), (-0.5, 0.5)))


@pytest.fixture
def no_jumps():
    from volterra_control.paths import LevyMeasureSpec

    return LevyMeasureSpec(0.0)


def assert_within(est, target, n_se=3.0, atol=0.0):
    assert abs(est.value - target) <= n_se * est.std_error + atol, (est, target)


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300)))


ACCEPTANCE = {}


def verdict(criterion, ok, detail):
    """Record and print one acceptance line, then assert it."""
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[criterion] = line
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[key])
