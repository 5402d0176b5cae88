import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from funcport.market import constant_market
from funcport.paths import TimeGrid, simulate_brownian

settings.register_profile("repo", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture
def grid():
    return TimeGrid(1.0, 16)


@pytest.fixture
def merton_market():
    # r = 1%, alpha = 5%, sigma = 20%: Merton fraction 1 for log utility
    return constant_market(0.01, [0.05], [[0.2]], 1.0)


@pytest.fixture
def two_asset_market():
    sigma = np.array([[0.2, 0.0], [0.06, 0.25]])
    return constant_market(0.02, [0.06, 0.08], sigma, 1.0, s0=[1.0, 2.0])


@pytest.fixture
def small_ensemble(grid):
    return simulate_brownian(grid, 1, 8, seed=11)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
