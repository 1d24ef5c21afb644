"""Semi-Lagrangian Vlasov solver, characteristic flows and coupling transport.

One step is a Strang splitting: half a step of free streaming in x, a full
velocity kick with the force of the intermediate density, and another half
step in x.  Each sub-step shifts grid lines by a constant amount, done with
periodic cubic B-spline interpolation (FFT prefilter + 4-tap evaluation).
The velocity axis is treated as periodic, which is harmless when f is
negligible at |xi| = v_max.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import BlowupDetected, KslabError, MarginalMismatch, OutOfDomain
from .phase_space import KineticDensity, min_image, spatial_density

log = logging.getLogger(__name__)


# interpolation -------------------------------------------------------------------

def _prefilter_symbol(n):
    return (4.0 + 2.0 * np.cos(2.0 * np.pi * np.arange(n) / n)) / 6.0


def spline_coefficients(values, axis=-1):
    """Periodic cubic B-spline coefficients along ``axis``."""
    n = values.shape[axis]
    shape = [1] * values.ndim
    shape[axis] = n
    sym = _prefilter_symbol(n).reshape(shape)
    return np.fft.ifft(np.fft.fft(values, axis=axis) / sym, axis=axis).real


def shift_axis(values, axis, shifts):
    """Shift every line along ``axis`` by ``shifts`` grid cells.

    ``out(.., j, ..) = interp(j - shift)``; ``shifts`` broadcasts against
    ``values`` with the shifted axis removed.
    """
    v = np.moveaxis(values, axis, -1)
    n = v.shape[-1]
    lead = v.shape[:-1]
    s = np.broadcast_to(np.asarray(shifts, dtype=float), lead).reshape(-1)
    coef = np.ascontiguousarray(spline_coefficients(v, -1).reshape(-1, n))
    out = _kernels.shift_rows(coef, np.ascontiguousarray(s))
    return np.moveaxis(out.reshape(lead + (n,)), -1, axis)


def _axis_shape(ndim, axis, n):
    shp = [1] * ndim
    shp[axis] = n
    return shp


def _drop_axis(arr_shape_full, arr, axis):
    """Take a broadcastable array over the full shape and remove ``axis``."""
    return np.take(np.broadcast_to(arr, arr_shape_full), 0, axis=axis)


# state and diagnostics -----------------------------------------------------------

def vlasov_energy(f, kernel):
    """Kinetic plus potential energy, (1/2) int |xi|^2 f + (1/2) int V rho."""
    grid = f.grid
    xi = grid.mesh()[grid.dim:]
    kin = 0.5 * float(np.sum(f.values * sum(m * m for m in xi)) * grid.cell)
    rho = spatial_density(f)
    pot = 0.5 * float(np.sum(kernel.potential(rho) * rho) * grid.cell_x)
    return kin + pot


def vlasov_diagnostics(f, kernel):
    rho = spatial_density(f)
    return {
        "t": f.time,
        "mass": f.mass,
        "l2": float(np.sqrt(np.sum(f.values ** 2) * f.grid.cell)),
        "energy": vlasov_energy(f, kernel),
        "rho_inf": float(rho.max()),
    }


@dataclass(frozen=True)
class VlasovState:
    """Solution snapshot with its kernel, step size and diagnostic history."""

    f: KineticDensity
    kernel: object
    dt: float
    diagnostics: tuple = field(default=())

    @property
    def t(self):
        return self.f.time

    @classmethod
    def start(cls, f, kernel, dt):
        return cls(f, kernel, float(dt), (vlasov_diagnostics(f, kernel),))


_warned = set()


def vlasov_step(state, dt=None, diagnose=True):
    """Advance one Strang step.

    Raises
    ------
    BlowupDetected
        If sup f grows by more than a factor 10.
    """
    f = state.f
    grid = f.grid
    d = grid.dim
    dt = state.dt if dt is None else float(dt)
    if dt > grid.dx / grid.v_max * (1 + 1e-12):
        key = (grid, dt)
        if key not in _warned:
            _warned.add(key)
            warnings.warn(f"dt={dt} exceeds dx/v_max={grid.dx / grid.v_max}", stacklevel=2)
    vals = f.values
    full = vals.shape
    mesh = grid.mesh()

    def stream(a, tau):
        for k in range(d):
            s = mesh[d + k] * (tau / grid.dx)
            a = shift_axis(a, k, _drop_axis(full, s, k))
        return a

    vals = stream(vals, 0.5 * dt)
    rho = spatial_density(vals, grid)
    E = state.kernel.force(rho)
    for k in range(d):
        s = E[k].reshape(E[k].shape + (1,) * d) * (dt / grid.dv)
        vals = shift_axis(vals, d + k, _drop_axis(full, s, d + k))
    vals = stream(vals, 0.5 * dt)

    old_max = float(f.values.max())
    new_max = float(vals.max())
    if old_max > 0 and new_max > 10.0 * old_max:
        raise BlowupDetected(f"sup f jumped from {old_max:.3e} to {new_max:.3e}")
    fn = KineticDensity.clamped(grid, vals, f.time + dt)
    diags = state.diagnostics + ((vlasov_diagnostics(fn, state.kernel),) if diagnose else ())
    return VlasovState(fn, state.kernel, state.dt, diags)


def _step_plan(t0, t_end, dt):
    span = t_end - t0
    if span < -1e-12:
        raise ValueError("t_end precedes the current time")
    if span <= 1e-12 * max(1.0, abs(t_end)):
        return []
    nfull = int(math.floor(span / dt + 1e-9))
    plan = [dt] * nfull
    rest = span - nfull * dt
    if rest > 1e-9 * dt:
        plan.append(rest)
    return plan


def solve_vlasov(state, t_end, observers=None, every=1):
    """Integrate to ``t_end`` with fixed steps (a shorter last step if needed).

    Parameters
    ----------
    observers : dict name -> callable(state), optional
        Evaluated at the initial time and every ``every`` steps and at the end.

    Returns
    -------
    state : VlasovState
    records : dict
        ``"t"`` plus one list per observer.
    """
    observers = observers or {}
    records = {"t": [state.t]}
    for name, fn in observers.items():
        records[name] = [fn(state)]
    plan = _step_plan(state.t, t_end, state.dt)
    for i, h in enumerate(plan):
        state = vlasov_step(state, h)
        if (i + 1) % every == 0 or i == len(plan) - 1:
            records["t"].append(state.t)
            for name, fn in observers.items():
                records[name].append(fn(state))
    return state, records


def flip_velocity(f):
    """The density (x, xi) -> f(x, -xi) on the same grid."""
    grid = f.grid
    vals = f.values
    for k in range(grid.dim):
        idx = (-np.arange(grid.n_v)) % grid.n_v
        vals = np.take(vals, idx, axis=grid.dim + k)
    return KineticDensity(grid, vals, f.time)


# characteristics -----------------------------------------------------------------

class FieldHistory:
    """Force field samples E(t_k, x_j), linear in time and cubic spline in x (d = 1)."""

    def __init__(self, grid, times, fields):
        if grid.dim != 1:
            raise ValueError("field histories are one-dimensional")
        self.grid = grid
        self.times = np.asarray(times, dtype=float)
        arr = np.asarray(fields, dtype=float).reshape(len(self.times), grid.n_x)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must increase")
        self.coef = spline_coefficients(arr, -1)

    def _at_index(self, k, x):
        pos = (np.asarray(x, dtype=float) - self.grid.x[0]) / self.grid.dx
        return _kernels.eval_points(np.ascontiguousarray(self.coef[k]), np.ascontiguousarray(pos))

    def __call__(self, t, x):
        ts = self.times
        if t <= ts[0]:
            return self._at_index(0, x)
        if t >= ts[-1]:
            if t > ts[-1] + 1e-9:
                raise KslabError(f"time {t} beyond recorded field history")
            return self._at_index(len(ts) - 1, x)
        k = int(np.searchsorted(ts, t, side="right")) - 1
        lam = (t - ts[k]) / (ts[k + 1] - ts[k])
        a = self._at_index(k, x)
        if lam == 0.0:
            return a
        return (1 - lam) * a + lam * self._at_index(k + 1, x)


def field_observer(kernel):
    """Observer recording the force field of the current density."""
    return lambda st: kernel.force(spatial_density(st.f))[0].copy()


@dataclass
class FlowMap:
    """Seeds and their images; ``path`` holds positions at ``times`` when recorded."""

    z0: np.ndarray
    z: np.ndarray
    t: float
    times: np.ndarray | None = None
    path: np.ndarray | None = None


def characteristics(field, seeds, t_end, dt, grid, t0=0.0, record_every=None,
                    periodic_velocity=False):
    """Leapfrog (drift-kick-drift) trajectories of dx/dt = xi, dxi/dt = E(t, x).

    Parameters
    ----------
    field : FieldHistory or callable(t, x) -> E
    seeds : (N, 2) array of (x0, xi0)
    grid : PhaseGrid
        Supplies the period in x and the velocity window.
    record_every : int, optional
        Store the phase points every so many steps.
    periodic_velocity : bool
        Wrap xi into [-v_max, v_max) like the grid solver instead of raising.

    Raises
    ------
    OutOfDomain
        If some |xi| exceeds v_max and ``periodic_velocity`` is False.
    """
    z0 = np.array(seeds, dtype=float).reshape(-1, 2)
    x = z0[:, 0].copy()
    xi = z0[:, 1].copy()
    L = grid.length_x
    plan = _step_plan(t0, t_end, dt)
    t = t0
    times, path = [t0], [np.stack([x, xi], 1)]
    for i, h in enumerate(plan):
        x = x + 0.5 * h * xi
        xi = xi + h * np.asarray(field(t + 0.5 * h, min_image(x, L)))
        x = x + 0.5 * h * xi
        t = t0 + sum(plan[:i + 1]) if i == len(plan) - 1 else t + h
        if periodic_velocity:
            xi = min_image(xi, 2 * grid.v_max)
        elif np.any(np.abs(xi) > grid.v_max):
            raise OutOfDomain(f"velocity {np.abs(xi).max():.4g} reached v_max={grid.v_max}")
        if record_every and ((i + 1) % record_every == 0 or i == len(plan) - 1):
            times.append(t)
            path.append(np.stack([min_image(x, L), xi], 1))
    z = np.stack([min_image(x, L), xi], 1)
    if record_every:
        return FlowMap(z0, z, t, np.array(times), np.array(path))
    return FlowMap(z0, z, t)


def transport_coupling(coupling, flow1, flow2):
    """Move the atoms of a coupling along two flows; weights are unchanged.

    The coupling must be supported on the seeds: atom i pairs
    ``flow1.z0[i]`` with ``flow2.z0[i]``.
    """
    from .transport import DiscreteCoupling

    for zc, fl, name in ((coupling.z1, flow1, "first"), (coupling.z2, flow2, "second")):
        if zc.shape != fl.z0.shape or not np.allclose(zc, fl.z0, rtol=0, atol=1e-12):
            raise MarginalMismatch(f"{name} side of the coupling is not on the flow seeds")
    return DiscreteCoupling(flow1.z, flow2.z, coupling.w, period=coupling.period,
                            check=False)
