"""Classical norms on grid functions: Lebesgue, mixed, Lorentz, weighted Sobolev.

Lorentz norms use the decreasing rearrangement of the piecewise constant
function.  If a_1 >= a_2 >= ... are the cell values and T_k the measure of
the k largest cells, then

    ||f||_{p,q}^q = (p/q) * sum_k a_k^q (T_k^{q/p} - T_{k-1}^{q/p})
    ||f||_{p,inf} = max_k a_k T_k^{1/p}

which is the layer-cake definition evaluated exactly on step functions.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import NegativeDensity, UnsupportedSpec
from .phase_space import KineticDensity, spatial_density

INF = math.inf

_FAMILIES = ("lebesgue", "mixed", "lorentz", "lorentz_mixed", "weighted_sobolev")


@dataclass(frozen=True)
class NormSpec:
    """A norm family with its exponents.

    Use the classmethods; ``p``, ``q``, ``inner`` may be ``math.inf``.
    """

    family: str
    p: float = 2.0
    q: float | None = None
    inner: float | None = None
    k: int = 0
    n: float = 0.0
    stencil_order: int = 4

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise UnsupportedSpec(f"unknown norm family {self.family!r}")
        for name in ("p", "q", "inner"):
            val = getattr(self, name)
            if val is not None and not val >= 1:
                raise UnsupportedSpec(f"{name}={val} must lie in [1, inf]")
        if self.family in ("lorentz", "lorentz_mixed") and self.p == INF and self.q != INF:
            raise UnsupportedSpec("L^{inf,q} with q < inf is trivial")
        if int(self.k) != self.k or self.k < 0:
            raise UnsupportedSpec(f"k={self.k} must be a nonnegative integer")
        if self.n < 0:
            raise UnsupportedSpec("weight exponent n must be >= 0")
        if self.stencil_order not in (2, 4):
            raise UnsupportedSpec("stencil_order must be 2 or 4")

    @classmethod
    def lebesgue(cls, p):
        return cls("lebesgue", p)

    @classmethod
    def mixed(cls, p_x, q_xi):
        return cls("mixed", p_x, q_xi)

    @classmethod
    def lorentz(cls, p, q):
        return cls("lorentz", p, q)

    @classmethod
    def lorentz_mixed(cls, p, q, inner):
        return cls("lorentz_mixed", p, q, inner)

    @classmethod
    def weighted_sobolev(cls, k, p, n, stencil_order=4):
        return cls("weighted_sobolev", p, k=k, n=n, stencil_order=stencil_order)


# elementary pieces ---------------------------------------------------------

def lp_sum(vals, p, cell, axis=None):
    """(sum |v|^p cell)^(1/p), or max |v| for p = inf."""
    a = np.abs(vals)
    if p == INF:
        return np.max(a, axis=axis) if a.size else 0.0
    if p == 1:
        return np.sum(a, axis=axis) * cell
    if p == 2:
        return np.sqrt(np.sum(a * a, axis=axis) * cell)
    return (np.sum(a ** p, axis=axis) * cell) ** (1.0 / p)


def lorentz_values(vals, p, q, cell):
    """Lorentz L^{p,q} norm of a step function with equal cells of measure ``cell``."""
    if p < 1 or (q is not None and q < 1):
        raise UnsupportedSpec("Lorentz exponents must be >= 1")
    a = np.sort(np.abs(np.ravel(vals)))[::-1]
    if a.size == 0 or a[0] == 0:
        return 0.0
    if p == INF:
        return float(a[0])
    T = cell * np.arange(1, a.size + 1)
    if q == INF:
        return float(np.max(a * T ** (1.0 / p)))
    inc = np.diff(np.concatenate(([0.0], T ** (q / p))))
    return float(((p / q) * np.sum(a ** q * inc)) ** (1.0 / q))


def fd_derivative(vals, axis, h, order=1, stencil_order=4):
    """Periodic central finite difference of the given derivative order."""
    def r(s):
        return np.roll(vals, -s, axis=axis)

    if order == 0:
        return np.array(vals, dtype=float)
    if order == 1:
        if stencil_order == 4:
            return (-r(2) + 8 * r(1) - 8 * r(-1) + r(-2)) / (12 * h)
        return (r(1) - r(-1)) / (2 * h)
    if order == 2:
        if stencil_order == 4:
            return (-r(2) + 16 * r(1) - 30 * vals + 16 * r(-1) - r(-2)) / (12 * h * h)
        return (r(1) - 2 * vals + r(-1)) / (h * h)
    first = fd_derivative(vals, axis, h, 2, stencil_order)
    return fd_derivative(first, axis, h, order - 2, stencil_order)


def velocity_gradient(vals, grid, stencil_order=4):
    """Finite-difference grad_xi, shape ``(d,) + grid.shape``."""
    d = grid.dim
    return np.array([fd_derivative(vals, d + k, grid.dv, 1, stencil_order) for k in range(d)])


def _split(obj, grid):
    if isinstance(obj, KineticDensity):
        return obj.values, obj.grid, True
    vals = np.asarray(obj, dtype=float)
    if grid is None:
        raise ValueError("a grid is required for raw arrays")
    if vals.shape == grid.shape:
        return vals, grid, True
    if vals.shape == grid.spatial_shape:
        return vals, grid, False
    raise ValueError(f"array shape {vals.shape} fits neither phase nor spatial grid")


def _inner_velocity(vals, grid, q):
    axes = tuple(range(grid.dim, 2 * grid.dim))
    return lp_sum(vals, q, grid.dv ** grid.dim, axis=axes)


def norm(obj, spec, grid=None):
    """Discretized norm of a kinetic density or grid function.

    Parameters
    ----------
    obj : KineticDensity or ndarray
        Phase-space function, or a spatial function when ``grid`` is given
        and the array has the spatial shape.
    spec : NormSpec
    grid : PhaseGrid, optional
        Needed for raw arrays.
    """
    vals, grid, phase = _split(obj, grid)
    cell = grid.cell if phase else grid.cell_x
    fam = spec.family
    if fam == "lebesgue":
        return float(lp_sum(vals, spec.p, cell))
    if fam == "lorentz":
        return lorentz_values(vals, spec.p, spec.q, cell)
    if fam in ("mixed", "lorentz_mixed"):
        if not phase:
            raise UnsupportedSpec(f"{fam} needs a phase-space function")
        inner_q = spec.q if fam == "mixed" else spec.inner
        g = _inner_velocity(vals, grid, inner_q)
        if fam == "mixed":
            return float(lp_sum(g, spec.p, grid.cell_x))
        return lorentz_values(g, spec.p, spec.q, grid.cell_x)
    # weighted Sobolev over all 2d (or d) variables
    nvar = 2 * grid.dim if phase else grid.dim
    hs = [grid.dx] * grid.dim + [grid.dv] * grid.dim
    if phase and spec.n:
        xi2 = sum(m * m for m in grid.mesh()[grid.dim:])
        weight = (1.0 + xi2) ** (0.5 * spec.n)
    else:
        weight = 1.0
    total = 0.0
    for alpha in itertools.product(range(int(spec.k) + 1), repeat=nvar):
        if sum(alpha) > spec.k:
            continue
        g = vals
        for ax, o in enumerate(alpha):
            if o:
                g = fd_derivative(g, ax, hs[ax], o, spec.stencil_order)
        total += float(lp_sum(weight * g, spec.p, cell)) ** 2
    return math.sqrt(total)


# stability functionals -----------------------------------------------------------

def lambda_l1(f, exponents=(3.0, 1.0), stencil_order=4):
    """Lorentz norm in x of the xi-integral of |grad_xi f|.

    Parameters
    ----------
    f : KineticDensity
    exponents : (p, q)
        Lorentz pair of the outer norm.
    """
    grid = f.grid
    gv = velocity_gradient(f.values, grid, stencil_order)
    mag = np.sqrt(np.sum(gv * gv, axis=0)) if grid.dim > 1 else np.abs(gv[0])
    g = _inner_velocity(mag, grid, 1)
    return lorentz_values(g, exponents[0], exponents[1], grid.cell_x)


def lambda_l2(f, c_inf, exponents=(3.0, 1.0), mid_exponent=3.0, stencil_order=4,
              return_terms=False):
    """Square-root stability functional.

    ``||rho||_inf^(1/2) ||grad_xi sqrt f||_{L^mid_x L^2_xi}
    + c_inf^(1/2) ||grad_xi sqrt f||_{L^{p,q}_x L^1_xi}``

    Parameters
    ----------
    f : KineticDensity or (values, grid)
    c_inf : float
        Upper bound for sup f.
    return_terms : bool
        Also return the two summands.
    """
    if isinstance(f, KineticDensity):
        vals, grid = f.values, f.grid
    else:
        vals, grid = f
        vals = np.asarray(vals, dtype=float)
    vmin = float(vals.min())
    if vmin < -1e-12:
        raise NegativeDensity(f"min value {vmin:.3e} below -1e-12")
    vmax = float(vals.max())
    if c_inf < vmax * (1 - 1e-12):
        raise ValueError(f"c_inf={c_inf} is below sup f={vmax}")
    root = np.sqrt(np.maximum(vals, 0.0))
    gv = velocity_gradient(root, grid, stencil_order)
    mag = np.sqrt(np.sum(gv * gv, axis=0)) if grid.dim > 1 else np.abs(gv[0])
    rho = spatial_density(np.maximum(vals, 0.0), grid)
    t1 = math.sqrt(float(rho.max())) * float(lp_sum(_inner_velocity(mag, grid, 2), mid_exponent,
                                                    grid.cell_x))
    t2 = math.sqrt(c_inf) * lorentz_values(_inner_velocity(mag, grid, 1), exponents[0],
                                           exponents[1], grid.cell_x)
    if return_terms:
        return t1 + t2, t1, t2
    return t1 + t2


def kernel_gradient_norms(kernel, p=1.5):
    """Weak and strong L^p norms of grad K on the grid: (||grad K||_{p,inf}, ||grad K||_p)."""
    g = kernel.grid
    gs = kernel.grad_samples
    mag = np.sqrt(np.sum(gs * gs, axis=0))
    return (lorentz_values(mag, p, INF, g.cell_x), float(lp_sum(mag, p, g.cell_x)))
