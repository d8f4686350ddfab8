import numpy as np
import pytest

from wide.problem import DissipationModel, TimeGrid, WideProblem, builtin_energy


def linear_problem(lam=1.0, nu=1.0, tau=0.1, N=3, u0=1.0, forcing=None):
    E = builtin_energy("quadratic", Lambda=[[lam]], forcing=forcing)
    return WideProblem(TimeGrid.from_step(tau, N), E, DissipationModel.quadratic(nu), 0.0, [u0])


def harmonic_problem(eps_tau=1e-3, T=2 * np.pi, N=2000, u0=1.0, u1=0.0):
    E = builtin_energy("quadratic", Lambda=[[1.0]])
    return WideProblem(TimeGrid(T, N), E, None, 1.0, [u0], [u1])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def linear():
    return linear_problem


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


def record_criterion(number, title, passed, detail):
    line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
