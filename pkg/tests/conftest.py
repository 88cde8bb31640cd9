import numpy as np
import pytest

from slipflow.config import RunSpec
from slipflow.fixed_point import SolveConfig, continue_to_zero
from slipflow.grid import Grid
from slipflow.operators import PhysicalParams

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def params():
    return PhysicalParams()


@pytest.fixture(scope="session")
def grid16():
    return Grid(16)


@pytest.fixture(scope="session")
def grid32():
    return Grid(32)


def bump_data(grid, delta):
    return RunSpec(delta=delta).boundary_data(grid)


@pytest.fixture(scope="session")
def small_solution16(grid16, params):
    """Continuation solution for a 1e-3 inflow density bump on N=16."""
    return continue_to_zero(SolveConfig(N=16), params, bump_data(grid16, 1e-3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
