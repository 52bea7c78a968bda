import numpy as np
import pytest

from thermalphi.lattice import LatticeSpec


def pytest_addoption(parser):
    parser.addoption("--scale", type=float, default=1.0,
                     help="multiplier on Monte Carlo sample counts in the acceptance run")


@pytest.fixture
def scale(request):
    return request.config.getoption("--scale")


@pytest.fixture
def small_spec():
    return LatticeSpec(beta=1.0, length=3.0, nt=8, nx=24, mass=1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


_ACCEPTANCE_LINES: list = []


@pytest.fixture
def acceptance_lines():
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
