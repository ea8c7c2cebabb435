import numpy as np
import pytest

from stackwave.discretization import Grid, WaveSolver
from stackwave.scale import ScaleFunction

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20261018)


@pytest.fixture(scope="session")
def sin_scale():
    return ScaleFunction.sinusoidal(0.1, 1.0, 1.0, 2.4)


@pytest.fixture(scope="session")
def small_solver(sin_scale):
    return WaveSolver(sin_scale, Grid(16, 64, 2.4))


@pytest.fixture(scope="session")
def flat_solver():
    return WaveSolver(ScaleFunction.constant(1.0, 2.4), Grid(16, 64, 2.4))
