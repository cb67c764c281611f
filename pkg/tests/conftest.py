import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mclab.grids import PhaseGrid
from mclab.kernels import KernelSpec

settings.register_profile("mclab", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("mclab")

ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def attractive():
    return KernelSpec.bounded(-(2 * np.pi) ** 2)


@pytest.fixture
def small_grid():
    return PhaseGrid(8, 16, 8.0, 2e-3)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
