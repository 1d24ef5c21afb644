"""Named families of initial data, sampled on a grid and renormalized to their mass."""
from __future__ import annotations

import math

import numpy as np

from .phase_space import KineticDensity


def _normalize(grid, vals, mass):
    total = float(np.sum(vals) * grid.cell)
    if total <= 0:
        raise ValueError("initial datum has zero mass on this grid")
    return KineticDensity(grid, vals * (mass / total))


def _mesh(grid):
    return np.broadcast_arrays(*grid.mesh())


def maxwellian(grid, amplitude=1.0, temperature=1.0):
    """Spatially uniform Maxwellian of total mass ``amplitude``."""
    m = _mesh(grid)
    xi2 = sum(v * v for v in m[grid.dim:])
    return _normalize(grid, np.exp(-xi2 / (2.0 * temperature)), amplitude)


def gaussian_bump(grid, center=(0.0, 0.0), widths=(1.0, 1.0), mass=1.0):
    """Gaussian in (x, xi) with the given centre and standard deviations.

    For d > 1 the same centre and width are used on every axis.
    """
    m = _mesh(grid)
    d = grid.dim
    arg = sum(((m[k] - center[0]) / widths[0]) ** 2 for k in range(d))
    arg = arg + sum(((m[d + k] - center[1]) / widths[1]) ** 2 for k in range(d))
    return _normalize(grid, np.exp(-0.5 * arg), mass)


def two_stream(grid, separation=2.0, temperature=0.25, mass=1.0):
    """Two counter-propagating Maxwellian beams at xi = +-separation/2."""
    m = _mesh(grid)
    v = m[grid.dim]
    s = 0.5 * separation
    vals = np.exp(-(v - s) ** 2 / (2 * temperature)) + np.exp(-(v + s) ** 2 / (2 * temperature))
    return _normalize(grid, vals, mass)


def perturbed(base, mode=1, amplitude=0.01):
    """base * (1 + amplitude cos(2 pi mode x / L)), same mass as ``base``."""
    grid = base.grid
    if not abs(amplitude) < 1:
        raise ValueError("|amplitude| must be below 1 to keep the density positive")
    x = _mesh(grid)[0]
    vals = base.values * (1.0 + amplitude * np.cos(2 * math.pi * mode * x / grid.length_x))
    return _normalize(grid, vals, base.mass)


FAMILIES = {
    "maxwellian": maxwellian,
    "gaussian_bump": gaussian_bump,
    "two_stream": two_stream,
    "perturbed": perturbed,
}
