"""Hartree dynamics of density operators on the periodic grid (d = 1).

The Hamiltonian is H = -hbar^2/2 Laplacian + V with V = K * diag(op).  One
step is a Strang splitting of the conjugation op -> U op U*:

    half potential phase with V(diag at step start),
    full kinetic phase by Fourier conjugation,
    half potential phase with V(diag after the kinetic phase).

Potential phases leave the diagonal unchanged, so the second potential is
the one of the end-of-step density and the step is symmetric and second
order.  Every factor is unitary, hence traces and Schatten norms are
preserved to rounding.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BlowupDetected, HistoryGap, KslabError
from .quantum import (DensityOperator, apply_left_fourier, apply_right_fourier, diag_operator,
                      momentum_moment, schatten_norm, weyl_quantize)
from .vlasov import _step_plan

log = logging.getLogger(__name__)

MOMENT_ORDERS = (2, 4, 6, 8, 10, 12, 14, 16)


def kinetic_phase(grid, hbar, dt):
    """exp(-i hbar k^2 dt / 2) on the FFT momentum grid."""
    k = grid.wavenumbers
    return np.exp(-0.5j * hbar * k * k * dt)


def conjugate_kinetic(M, phase):
    """F^-1 diag(phase) F M F^-1 diag(conj phase) F."""
    return apply_right_fourier(apply_left_fourier(M, phase), phase.conj())


def conjugate_potential(M, V, tau, hbar):
    """exp(-i V tau / hbar) M exp(i V tau / hbar)."""
    u = np.exp(-1j * V * (tau / hbar))
    return (u[:, None] * M) * u.conj()[None, :]


def hartree_potential(op, kernel):
    """V = K * diag(op) on the spatial grid."""
    return kernel.potential(diag_operator(op))


def total_energy(op, kernel):
    """h Tr(-hbar^2/2 Laplacian op) + (1/2) sum V diag dx."""
    kin = 0.5 * momentum_moment(op, 2)
    rho = diag_operator(op)
    pot = 0.5 * float(np.sum(kernel.potential(rho) * rho) * op.grid.dx)
    return kin + pot


def hartree_diagnostics(op, kernel, t, moments=False):
    rho = diag_operator(op)
    d = {
        "t": t,
        "trace": op.scaled_trace,
        "l2": schatten_norm(op, 2),
        "energy": total_energy(op, kernel),
        "diag_inf": float(rho.max()),
    }
    if moments:
        for k in MOMENT_ORDERS:
            d[f"moment_{k}"] = momentum_moment(op, k)
    return d


@dataclass(frozen=True)
class HartreeState:
    """Density operator with its kernel, time, step size and diagnostics."""

    op: DensityOperator
    kernel: object
    t: float
    dt: float
    diagnostics: tuple = field(default=())

    @classmethod
    def start(cls, op, kernel, dt, t=0.0, moments=False):
        return cls(op, kernel, float(t), float(dt),
                   (hartree_diagnostics(op, kernel, float(t), moments),))


def split_step(M, grid, hbar, dt, V_first, V_second_of):
    """One Strang step on a raw matrix.

    ``V_second_of`` maps the intermediate matrix to the second potential.
    Returns the new matrix and both potentials.
    """
    M = conjugate_potential(M, V_first, 0.5 * dt, hbar)
    M = conjugate_kinetic(M, kinetic_phase(grid, hbar, dt))
    V2 = V_second_of(M)
    M = conjugate_potential(M, V2, 0.5 * dt, hbar)
    return M, V_first, V2


def step_unitary(grid, hbar, dt, V1, V2):
    """The matrix of the split-step unitary for given potentials."""
    u1 = np.exp(-0.5j * V1 * dt / hbar)
    u2 = np.exp(-0.5j * V2 * dt / hbar)
    kin = np.fft.ifft(kinetic_phase(grid, hbar, dt)[:, None] * np.fft.fft(np.diag(u1), axis=0),
                      axis=0)
    return u2[:, None] * kin


def _check_blowup(M, M0):
    if not np.all(np.isfinite(M)):
        raise BlowupDetected("non-finite entries in the density matrix")
    a, b = np.abs(M).max(), np.abs(M0).max()
    if b > 0 and a > 10.0 * b:
        raise BlowupDetected(f"max |entry| jumped from {b:.3e} to {a:.3e}")


def propagate_states(Psi, grid, hbar, dt, V1, V2):
    """Apply the split-step unitary to each row of ``Psi``."""
    Psi = Psi * np.exp(-0.5j * V1 * dt / hbar)[None, :]
    Psi = np.fft.ifft(kinetic_phase(grid, hbar, dt)[None, :] * np.fft.fft(Psi, axis=1), axis=1)
    return Psi * np.exp(-0.5j * V2 * dt / hbar)[None, :]


def hartree_step(state, dt=None, diagnose=True, moments=False, return_potentials=False):
    """Advance one split step; returns the new state (and both potentials)."""
    op = state.op
    grid, hb = op.grid, op.hbar
    dt = state.dt if dt is None else float(dt)
    kernel = state.kernel
    V1 = hartree_potential(op, kernel)

    def second(M):
        return kernel.potential(op.h * np.real(np.diag(M)) / grid.dx)

    M, _, V2 = split_step(op.matrix, grid, hb, dt, V1, second)
    M = 0.5 * (M + M.conj().T)
    _check_blowup(M, op.matrix)
    new = op.like(M)
    t = state.t + dt
    diags = state.diagnostics
    if diagnose:
        diags = diags + (hartree_diagnostics(new, kernel, t, moments),)
    out = HartreeState(new, kernel, t, state.dt, diags)
    if return_potentials:
        return out, V1, V2
    return out


def solve_hartree(state, t_end, observers=None, every=1, moments=False):
    """Integrate to ``t_end``; same conventions as :func:`kslab.vlasov.solve_vlasov`."""
    observers = observers or {}
    records = {"t": [state.t]}
    for name, fn in observers.items():
        records[name] = [fn(state)]
    plan = _step_plan(state.t, t_end, state.dt)
    for i, h in enumerate(plan):
        state = hartree_step(state, h, moments=moments)
        if (i + 1) % every == 0 or i == len(plan) - 1:
            records["t"].append(state.t)
            for name, fn in observers.items():
                records[name].append(fn(state))
    return state, records


# self-consistent stationary states --------------------------------------------

def hamiltonian_matrix(grid, hbar, V):
    """-hbar^2/2 Laplacian (spectral) + diag(V) as a dense Hermitian matrix."""
    n = grid.n_x
    k = grid.wavenumbers
    F = np.fft.fft(np.eye(n), axis=0)
    T = np.fft.ifft(0.5 * hbar * hbar * k[:, None] ** 2 * F, axis=0)
    H = T + np.diag(V)
    return 0.5 * (H + H.conj().T)


def stationary_state(grid, hbar, kernel, n_states=1, mass=1.0, tol=1e-13, max_iter=500,
                     mixing=0.5):
    """Self-consistent spectral projector: op proportional to the projector on the
    ``n_states`` lowest eigenvectors of H(V(op)), scaled to ``mass``.

    Solved by damped fixed-point iteration on the density, started from a
    centred Gaussian.  Attractive kernels (sign -1) converge to a localized
    state; for repulsive ones the iteration usually stalls because the
    fixed point is the translation-invariant uniform state.

    Raises
    ------
    KslabError
        If the iteration does not reach ``tol`` in ``max_iter`` steps.
    """
    h = 2 * math.pi * hbar
    rho = np.full(grid.n_x, mass / grid.length_x)
    x = grid.x
    # break translation symmetry with a centred start
    rho = np.exp(-x * x / 2.0)
    rho *= mass / (rho.sum() * grid.dx)
    for it in range(max_iter):
        V = kernel.potential(rho)
        lam, U = np.linalg.eigh(hamiltonian_matrix(grid, hbar, V))
        P = U[:, :n_states] @ U[:, :n_states].conj().T
        M = P * (mass / (h * n_states))
        new = h * np.real(np.diag(M)) / grid.dx
        err = np.abs(new - rho).max() / max(new.max(), 1e-300)
        if err < tol:
            rho = new
            break
        rho = (1 - mixing) * rho + mixing * new
    else:
        raise KslabError(f"self-consistent iteration stalled at {err:.2e}")
    return DensityOperator(M, grid, hbar, kind="state", trace_target=mass)


# linear Hartree dynamics driven by a classical history ------------------------

class PotentialHistory:
    """Potentials V_f(t_k) = K * rho_f(t_k), linear in time."""

    def __init__(self, grid, times, potentials):
        self.grid = grid
        self.times = np.asarray(times, dtype=float)
        self.potentials = np.asarray(potentials, dtype=float).reshape(len(self.times), grid.n_x)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must increase")

    @classmethod
    def from_densities(cls, kernel, times, densities):
        return cls(kernel.grid, times, [kernel.potential(np.asarray(r)) for r in densities])

    def __call__(self, t):
        ts = self.times
        if t < ts[0] - 1e-9 or t > ts[-1] + 1e-9:
            raise HistoryGap(f"time {t} outside the recorded history [{ts[0]}, {ts[-1]}]")
        k = int(np.clip(np.searchsorted(ts, t, side="right") - 1, 0, len(ts) - 2))
        lam = (t - ts[k]) / (ts[k + 1] - ts[k])
        lam = min(max(lam, 0.0), 1.0)
        return (1 - lam) * self.potentials[k] + lam * self.potentials[k + 1]


def solve_linear_hartree(op0, history, t_end, dt, t0=0.0, observers=None, every=1):
    """Evolve op0 with the Hamiltonian -hbar^2/2 Laplacian + V_f(t).

    The first half potential of a step is V_f(t_n) and the second V_f(t_n+1).

    Raises
    ------
    HistoryGap
        If the history is sampled more coarsely than ``dt``.
    """
    gaps = np.diff(history.times)
    if gaps.size and gaps.max() > dt * (1 + 1e-9):
        raise HistoryGap(f"history spacing {gaps.max():.4g} exceeds dt={dt}")
    grid, hb = op0.grid, op0.hbar
    M = op0.matrix
    observers = observers or {}
    t = t0
    records = {"t": [t]}
    for name, fn in observers.items():
        records[name] = [fn(op0, t)]
    plan = _step_plan(t0, t_end, dt)
    op = op0
    for i, h in enumerate(plan):
        V1, V2 = history(t), history(t + h)
        M, _, _ = split_step(M, grid, hb, h, V1, lambda _m, V2=V2: V2)
        M = 0.5 * (M + M.conj().T)
        t = t0 + sum(plan[:i + 1]) if i == len(plan) - 1 else t + h
        if (i + 1) % every == 0 or i == len(plan) - 1:
            op = op0.like(M)
            records["t"].append(t)
            for name, fn in observers.items():
                records[name].append(fn(op, t))
    return op0.like(M), records


# B-term -----------------------------------------------------------------------------

def _halfgrid_index(n):
    a = np.arange(n)
    v = (a[:, None] - a[None, :])
    # minimal-image separation in cells and unwrapped midpoint on the half grid
    vs = (v + n // 2) % n - n // 2
    b = a[None, :] * np.ones((n, 1), dtype=int)
    return vs, b


def b_term(f, scale, kernel, return_norm=True):
    """Taylor-remainder operator of the mean-field potential times Weyl(f).

    B(x, y) = (V(x) - V(y) - V'((x + y) / 2) (x - y)) Weyl(f)(x, y), with
    V = K * rho_f and x - y the minimal-image separation.

    Returns
    -------
    B : DensityOperator (kind "general")
    norm : float
        Scaled trace norm, when ``return_norm``.
    """
    from .phase_space import spatial_density

    grid = f.grid
    W = weyl_quantize(f, scale, validate=False)
    rho = spatial_density(f)
    n = grid.n_x
    vs, b = _halfgrid_index(n)
    xb = grid.x[b]
    sep = vs * grid.dx
    if kernel.periodic:
        V, dV = kernel.potential_halfgrid(rho)
        Vx = V[(2 * (b + vs)) % (2 * n)]
        Vy = V[2 * b]
        mid = dV[(2 * b + vs) % (2 * n)]
    else:
        Vf, dVf = kernel.potential_function(rho)
        Vx = Vf(xb + sep)
        Vy = Vf(xb)
        mid = dVf(xb + 0.5 * sep)
    bracket = Vx - Vy - mid * sep
    # the seam separation n/2 has no unique minimal image
    bracket[np.abs(vs) == n // 2] = 0.0
    B = W.like(bracket * W.matrix, kind="general")
    if return_norm:
        return B, schatten_norm(B, 1)
    return B
