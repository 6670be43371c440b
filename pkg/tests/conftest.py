import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fermibgk.phasegrid import GlobalEquilibrium, SpatialGrid

settings.register_profile(
    "fermibgk",
    deadline=None,
    max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("fermibgk")

LN3 = math.log(3.0)

_CRITERIA = {}


@pytest.fixture(scope="session")
def criterion():
    """Record one acceptance verdict: criterion(number, title, passed, detail)."""

    def record(number, title, passed, detail=""):
        _CRITERIA[number] = (title, bool(passed), detail)
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, passed, detail = _CRITERIA[number]
        flag = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{number:2d}] {flag}  {title}  {detail}")


@pytest.fixture(scope="session")
def ge24():
    """Global equilibrium a0 = 1, c0 = 0 on the 24^3 grid used by the solver."""
    return GlobalEquilibrium.from_params(1.0, 0.0, n_p=24)


@pytest.fixture(scope="session")
def ge48():
    """Same equilibrium on a grid fine enough for the closed-form basis."""
    return GlobalEquilibrium.from_params(1.0, 0.0, n_p=48)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def line8():
    return SpatialGrid(2 * math.pi, 8)
