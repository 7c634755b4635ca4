import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mfbr.games import asym_2x2, gaussian_grid_64, matching_pennies
from mfbr.measure import StrategySpace, uniform_reference

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def two():
    return StrategySpace.finite(2)


@pytest.fixture
def uref(two):
    return uniform_reference(two)


@pytest.fixture(scope="session")
def mp():
    return matching_pennies()


@pytest.fixture(scope="session")
def asym():
    return asym_2x2()


@pytest.fixture(scope="session")
def grid_game():
    return gaussian_grid_64()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def report():
    """Record one PASS/FAIL line per acceptance criterion."""
    def _report(label: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
