import numpy as np
import pytest

from nwi.acquisition import EmissionPlan, Waveform, synthesize_focused
from nwi.gradcheck import smooth_random_props
from nwi.grid import ProbeGeometry, PropertySet, PulseField, SimulationGrid
from nwi.solver import PmlConfig


@pytest.fixture
def small_grid():
    return SimulationGrid(16, 16, 60, 1e-4, 2.5e-8)


@pytest.fixture
def small_problem(small_grid):
    """Heterogeneous 16 x 16 medium, one focused emission and a 3-cell absorbing layer."""
    g = small_grid
    geom = ProbeGeometry.linear(g, 12, 1, row=3)
    plan = EmissionPlan(1, 9, 0, Waveform(3e6, 2, 1e21), focus_depth=8e-4)
    pulse = synthesize_focused(plan, geom, g, 0)
    return {
        "grid": g,
        "geom": geom,
        "pulse": pulse,
        "pml": PmlConfig.tuned(g, 3),
        "props": smooth_random_props(g.shape, 1),
        "truth": smooth_random_props(g.shape, 2),
    }


def point_pulse(grid, cell, scale=1e10, seed=0):
    rng = np.random.default_rng(seed)
    return PulseField.point(grid, cell, scale * rng.standard_normal(grid.nt))


@pytest.fixture
def water():
    return lambda shape: PropertySet.uniform(shape)


# -- acceptance summary ---------------------------------------------------------------

ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` prints and records one acceptance verdict."""

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
