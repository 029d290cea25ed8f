import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from spinsqueeze.model import TWO_PI

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def hz():
    """Ordinary frequency to rad/s."""
    return lambda f: TWO_PI * np.asarray(f, dtype=float)
