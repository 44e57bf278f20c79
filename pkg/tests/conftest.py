import numpy as np
import pytest

from beltrami_sc.fields import BumpField, GridSpec, PiecewiseField, average_field
from beltrami_sc.gluing import build_grid_complex, triangle_fixture
from beltrami_sc.uniformize import normalize, solve_parameter_problem

BUMP = BumpField(0.3, 0j, 1.0)


def single_cell_field(value=0.2j, m=3, L=1.5, row=1, col=1):
    vals = np.zeros((m, m), complex)
    vals[row, col] = value
    return PiecewiseField(GridSpec(L, m), vals)


def solve_field(pw, options=None):
    return normalize(solve_parameter_problem(build_grid_complex(pw), options))


@pytest.fixture(scope="session")
def triangle_map():
    return solve_parameter_problem(triangle_fixture())


@pytest.fixture(scope="session")
def single_cell_map():
    return solve_field(single_cell_field())


@pytest.fixture(scope="session")
def zero_map():
    return solve_field(PiecewiseField(GridSpec(1.0, 4), np.zeros((4, 4), complex)))


@pytest.fixture(scope="session")
def bump_maps():
    """Normalized bump solves at m = 4, 8, 16 on [-2, 2]^2."""
    return {m: solve_field(average_field(BUMP, GridSpec(2.0, m))) for m in (4, 8, 16)}


@pytest.fixture(scope="session")
def fine_bump_map():
    """m = 16 on the tightest square whose boundary cells miss the bump."""
    return solve_field(average_field(BUMP, GridSpec(1.15, 16)))


_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one pass/fail line for an acceptance criterion; the lines are printed in the summary."""

    def record(number: int, title: str, passed: bool, detail: str) -> bool:
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        _CRITERIA[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[k])
