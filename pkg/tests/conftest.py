import sys

import numpy as np
import pytest
from hypothesis import settings

from kslab.phase_space import InteractionKernel, KineticDensity, PhaseGrid

settings.register_profile("kslab", max_examples=25, deadline=None)
settings.load_profile("kslab")


@pytest.fixture
def grid64():
    return PhaseGrid(64, 64, 16.0, 8.0)


@pytest.fixture
def qgrid():
    """Quantum-paired grid, hbar = 0.2, n = 64, L = 16."""
    return PhaseGrid.for_hbar(64, 16.0, 0.2)


def product_gaussian(grid, sx=1.0, sv=1.0, x0=0.0, v0=0.0):
    X, V = np.broadcast_arrays(*grid.mesh())
    vals = np.exp(-0.5 * ((X - x0) / sx) ** 2 - 0.5 * ((V - v0) / sv) ** 2) / (2 * np.pi * sx * sv)
    return KineticDensity(grid, vals)


def smooth_kernel(grid, eps=0.5):
    return InteractionKernel.regularized_coulomb(grid, eps)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "REPORT", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(lines, key=lambda k: (int(k.split()[0][1:]), k)):
        terminalreporter.write_line(lines[key])
