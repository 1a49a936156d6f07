import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES: dict = {}


def finite_vectors(dim, lo=-50.0, hi=50.0):
    """Hypothesis strategy for float vectors of length ``dim``."""
    return st.lists(st.floats(lo, hi, allow_nan=False, allow_infinity=False),
                    min_size=dim, max_size=dim).map(np.array)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
