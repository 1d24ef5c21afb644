"""Density operators on the discretized circle and the quantization toolbox.

Operators are stored as matrices in the orthonormal grid basis
e_a = dx^(-1/2) 1_{cell a}, so the integral kernel is ``matrix / dx`` and the
scaled trace is ``h * trace(matrix)``.  The momentum grid paired with the
velocity axis of a :class:`~kslab.phase_space.PhaseGrid` is
p_m = (m - n/2) dp with dp = 2 pi hbar / L.

Weyl and Wigner are exact inverses on band-limited symbols.  Matrix entries
with odd separation sit at half-grid midpoints; these are reached by a
trigonometric half-shift along x.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (GridIncompatible, KslabError, NegativeInput, UnsupportedOrder)
from .phase_space import KineticDensity, half_shift, min_image

HERMITIAN_TOL = 1e-12
POSITIVE_TOL = 1e-10
TRACE_TOL = 1e-10


@dataclass(frozen=True)
class PlanckScale:
    """Reduced Planck constant; ``h = 2 pi hbar``."""

    hbar: float

    def __post_init__(self):
        if not self.hbar > 0:
            raise ValueError("hbar must be positive")

    @property
    def h(self):
        return 2.0 * math.pi * self.hbar


def _hbar(scale):
    return scale.hbar if isinstance(scale, PlanckScale) else float(scale)


def _check_grid(grid, hbar):
    if grid.dim != 1:
        raise GridIncompatible("the quantum toolbox is implemented for d = 1")
    grid.check_hbar(hbar)


class DensityOperator:
    """Matrix of an operator on the spatial grid together with its scale.

    Parameters
    ----------
    matrix : (n, n) complex array
        Operator matrix in the orthonormal grid basis.
    grid : PhaseGrid
        Phase grid whose velocity axis is the momentum grid of ``hbar``.
    hbar : float or PlanckScale
    kind : {"state", "symbol", "general"}
        States are checked for hermiticity, positivity and scaled trace.
        Weyl quantizations are "symbol" (hermiticity only when ``validate``),
        commutators and other derived operators are "general".
    trace_target : float
        Expected scaled trace of a state.
    validate : bool
        Run the invariant checks (costs an eigendecomposition for states).
    """

    __slots__ = ("matrix", "grid", "hbar", "kind", "trace_target")

    def __init__(self, matrix, grid, hbar, kind="state", trace_target=1.0, validate=True):
        hb = _hbar(hbar)
        _check_grid(grid, hb)
        M = np.array(matrix, dtype=complex)
        if M.shape != (grid.n_x, grid.n_x):
            raise GridIncompatible(f"matrix shape {M.shape} != ({grid.n_x}, {grid.n_x})")
        M.setflags(write=False)
        self.matrix = M
        self.grid = grid
        self.hbar = hb
        self.kind = kind
        self.trace_target = float(trace_target)
        if validate and kind in ("state", "symbol"):
            scale = max(np.linalg.norm(M), 1e-300)
            herm = np.linalg.norm(M - M.conj().T)
            if herm > HERMITIAN_TOL * scale:
                raise KslabError(f"operator not Hermitian: defect {herm / scale:.2e}")
        if validate and kind == "state":
            lam = np.linalg.eigvalsh(0.5 * (M + M.conj().T))
            if lam[0] < -POSITIVE_TOL * max(abs(lam).max(), 1e-300):
                raise KslabError(f"state not positive: min eigenvalue {lam[0]:.3e}")
            tr = self.scaled_trace
            if abs(tr - self.trace_target) > TRACE_TOL * max(1.0, abs(self.trace_target)):
                raise KslabError(f"scaled trace {tr!r} != target {self.trace_target!r}")

    @property
    def h(self):
        return 2.0 * math.pi * self.hbar

    @property
    def scale(self):
        return PlanckScale(self.hbar)

    @property
    def n(self):
        return self.grid.n_x

    @property
    def scaled_trace(self):
        return float(self.h * np.trace(self.matrix).real)

    def like(self, matrix, kind=None, validate=False, trace_target=None):
        """New operator on the same grid and scale."""
        return DensityOperator(matrix, self.grid, self.hbar, kind or self.kind,
                               self.trace_target if trace_target is None else trace_target,
                               validate=validate)

    def __repr__(self):
        return (f"DensityOperator(n={self.n}, hbar={self.hbar}, kind={self.kind!r}, "
                f"scaled_trace={self.scaled_trace:.6g})")


def _matrix(op):
    return op.matrix if isinstance(op, DensityOperator) else np.asarray(op)


# index helpers -----------------------------------------------------------------

def _signed(n):
    v = np.arange(n)
    return np.where(v >= n // 2, v - n, v)


def _diagonals(M):
    """D[b, v] = M[(b + v) % n, b]."""
    n = M.shape[0]
    b = np.arange(n)[:, None]
    v = np.arange(n)[None, :]
    return M[(b + v) % n, b]


def _from_diagonals(D):
    n = D.shape[0]
    b = np.arange(n)[:, None]
    v = np.arange(n)[None, :]
    M = np.empty((n, n), dtype=complex)
    M[(b + v) % n, b] = D
    return M


def _symbol_values(f, grid):
    if isinstance(f, KineticDensity):
        return f.values, f.grid
    if grid is None:
        raise ValueError("grid is required for raw arrays")
    return np.asarray(f, dtype=float), grid


# Weyl / Wigner -------------------------------------------------------------------

def _weyl_matrix(f):
    n = f.shape[0]
    alt = (-1.0) ** np.arange(n)
    G = np.fft.ifft(f, axis=1) * alt[None, :]
    Gh = half_shift(G, 0.5, axis=0)
    odd = (np.arange(n) % 2 == 1)[None, :]
    S = np.where(odd, Gh, G)
    b = np.arange(n)[:, None]
    fl = np.floor_divide(_signed(n), 2)[None, :]
    D = S[(b + fl) % n, np.arange(n)[None, :]]
    c = n // 2
    rows = np.arange(n)
    # seam column: separation -n/2 has two midpoints, averaged
    D[:, c] = 0.5 * (G[(rows - n // 4) % n, c] + G[(rows + n // 4) % n, c])
    return _from_diagonals(D)


def weyl_quantize(f, scale, grid=None, validate=True):
    """Weyl quantization of a phase-space symbol.

    Parameters
    ----------
    f : KineticDensity or ndarray
        Real symbol; raw arrays need ``grid`` and may be signed.
    scale : PlanckScale or float

    Returns
    -------
    DensityOperator with ``kind="symbol"``; scaled trace equals the
    integral of f.
    """
    vals, grid = _symbol_values(f, grid)
    hb = _hbar(scale)
    _check_grid(grid, hb)
    M = _weyl_matrix(vals)
    if np.isrealobj(vals):
        M = 0.5 * (M + M.conj().T)
    mass = float(np.sum(vals) * grid.cell)
    return DensityOperator(M, grid, hb, kind="symbol", trace_target=mass, validate=validate)


def _wigner_values(M):
    n = M.shape[0]
    D = _diagonals(M)
    b = np.arange(n)[:, None]
    fl = np.floor_divide(_signed(n), 2)[None, :]
    S = np.empty_like(D)
    S[(b + fl) % n, np.arange(n)[None, :]] = D
    odd = (np.arange(n) % 2 == 1)[None, :]
    G = np.where(odd, half_shift(S, -0.5, axis=0), S)
    G[:, n // 2] = D[(np.arange(n) + n // 4) % n, n // 2]
    alt = (-1.0) ** np.arange(n)
    return np.fft.fft(G * alt[None, :], axis=1)


def wigner_transform(op):
    """Wigner function of an operator on the paired phase grid.

    Returns a real array of shape (n, n) for Hermitian input; complex for
    general operators.
    """
    M = _matrix(op)
    W = _wigner_values(M)
    herm = np.abs(M - M.conj().T).max() <= HERMITIAN_TOL * max(np.abs(M).max(), 1e-300)
    return W.real if herm else W


# coherent states ---------------------------------------------------------------

def _phi(grid, hbar):
    """Periodized Gaussian profile exp(-s^2 / (2 hbar)) at minimal-image offsets, unit l2."""
    L = grid.length_x
    if L < 12 * math.sqrt(hbar):
        raise GridIncompatible("coherent states need L >= 12 sqrt(hbar)")
    s = _signed(grid.n_x) * grid.dx
    ph = np.exp(-s * s / (2 * hbar))
    return ph / np.sqrt(np.sum(ph * ph))


def coherent_state(grid, hbar, x0, xi0):
    """Unit vector of the coherent state centred at (x0, xi0), grid basis.

    The profile is the Gaussian of width sqrt(hbar) wrapped to the
    minimal image and renormalized; the plane wave is taken relative to x0.
    """
    hb = _hbar(hbar)
    s = min_image(grid.x - x0, grid.length_x)
    amp = np.exp(-s * s / (2 * hb))
    psi = amp * np.exp(1j * xi0 * s / hb)
    return psi / np.linalg.norm(psi)


def coherent_states(grid, hbar, points):
    """Stack of coherent-state vectors, one row per phase point."""
    hb = _hbar(hbar)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    s = min_image(grid.x[None, :] - pts[:, :1], grid.length_x)
    psi = np.exp(-s * s / (2 * hb)) * np.exp(1j * pts[:, 1:2] * s / hb)
    return psi / np.linalg.norm(psi, axis=1, keepdims=True)


def _pair_kernel(grid, hbar):
    n = grid.n_x
    ph = _phi(grid, hbar)
    i = np.arange(n)[:, None]
    v = np.arange(n)[None, :]
    return ph[(i + v) % n] * ph[i[:, 0]][:, None]


def _gaussian_symbol_kernel(grid, hbar):
    """G_hbar sampled at minimal-image phase offsets, normalized to unit mass."""
    sx = _signed(grid.n_x) * grid.dx
    sp = _signed(grid.n_v) * grid.dv
    G = np.exp(-(sx[:, None] ** 2 + sp[None, :] ** 2) / hbar)
    return G / (G.sum() * grid.cell)


def gaussian_smooth(vals, grid, hbar):
    """Circular convolution of a phase-space array with G_hbar."""
    G = _gaussian_symbol_kernel(grid, hbar)
    return np.fft.ifft2(np.fft.fft2(vals) * np.fft.fft2(G)).real * grid.cell


def wick_quantize(f, scale, grid=None, route="coherent", validate=True):
    """Toeplitz (Wick) quantization (1/h) sum_z f(z) |psi_z><psi_z| dz.

    Parameters
    ----------
    f : KineticDensity or nonnegative ndarray
    scale : PlanckScale or float
    route : {"coherent", "smoothed"}
        "coherent" sums coherent-state projectors over grid points (exactly
        positive); "smoothed" applies Weyl to G_hbar * f.
    """
    vals, grid = _symbol_values(f, grid)
    hb = _hbar(scale)
    _check_grid(grid, hb)
    if vals.min() < -1e-12:
        raise NegativeInput(f"symbol has negative values down to {vals.min():.3e}")
    vals = np.maximum(vals, 0.0)
    mass = float(np.sum(vals) * grid.cell)
    if route == "smoothed":
        M = _weyl_matrix(gaussian_smooth(vals, grid, hb))
    elif route == "coherent":
        n = grid.n_x
        K = _pair_kernel(grid, hb)
        H = np.fft.ifft(vals, axis=1)
        D = np.fft.ifft(np.fft.fft(K, axis=0) * np.fft.fft(H, axis=0), axis=0)
        D *= ((-1.0) ** np.arange(n))[None, :]
        M = _from_diagonals(D)
    else:
        raise ValueError(f"unknown route {route!r}")
    M = 0.5 * (M + M.conj().T)
    return DensityOperator(M, grid, hb, kind="state", trace_target=mass, validate=validate)


def husimi_values(op):
    """<psi_z| op |psi_z> on the paired phase grid (raw array)."""
    M = _matrix(op)
    grid, hb = op.grid, op.hbar
    n = grid.n_x
    D = _diagonals(M)
    K = _pair_kernel(grid, hb)
    Kr = K[(-np.arange(n)) % n]
    C = np.fft.ifft(np.fft.fft(Kr, axis=0) * np.fft.fft(D, axis=0), axis=0)
    alt = ((-1.0) ** np.arange(n))[None, :]
    return np.fft.fft(C * alt, axis=1).real


def husimi_transform(op):
    """Husimi function of a positive operator as a KineticDensity.

    Its mass is the scaled trace of ``op``.
    """
    vals = husimi_values(op)
    return KineticDensity(op.grid, vals)


def diag_operator(op):
    """Position density h * kernel(x, x) = h * M_jj / dx."""
    M = _matrix(op)
    return op.h * np.real(np.diag(M)) / op.grid.dx


def schatten_norm(op, p, hbar=None):
    """Scaled Schatten norm h^(1/p) (sum sigma^p)^(1/p); p = inf gives sigma_max."""
    M = _matrix(op)
    hb = op.hbar if isinstance(op, DensityOperator) else float(hbar)
    h = 2 * math.pi * hb
    if p == 2:
        return float(math.sqrt(h) * np.linalg.norm(M))
    herm = np.abs(M - M.conj().T).max() <= 1e-14 * max(np.abs(M).max(), 1e-300)
    if herm:
        s = np.abs(np.linalg.eigvalsh(0.5 * (M + M.conj().T)))
    else:
        s = np.linalg.svd(M, compute_uv=False)
    if p == math.inf:
        return float(s.max())
    if p == 1:
        return float(h * s.sum())
    return float(h ** (1.0 / p) * np.sum(s ** p) ** (1.0 / p))


# gradients and weights ---------------------------------------------------------

def _deriv_symbol(grid):
    k = grid.wavenumbers.copy()
    k[grid.n_x // 2] = 0.0
    return 1j * k


def apply_left_fourier(M, mult):
    """F^-1 diag(mult) F M (multiplier acting on the row index)."""
    return np.fft.ifft(mult[:, None] * np.fft.fft(M, axis=0), axis=0)


def apply_right_fourier(M, mult):
    """M F^-1 diag(mult) F."""
    return np.fft.fft(mult[None, :] * np.fft.ifft(M, axis=1), axis=1)


def quantum_gradient(op, axis):
    """Quantum gradient: [d/dx, op] for axis "x", [X/(i hbar), op] for axis "xi".

    X is the sawtooth position on [-L/2, L/2).
    """
    M = _matrix(op)
    grid = op.grid
    if axis == "x":
        ik = _deriv_symbol(grid)
        G = apply_left_fourier(M, ik) - apply_right_fourier(M, ik)
    elif axis in ("xi", "v", "p"):
        x = grid.x
        G = (x[:, None] - x[None, :]) * M / (1j * op.hbar)
    else:
        raise ValueError(f"axis must be 'x' or 'xi', got {axis!r}")
    return op.like(G, kind="general")


def momentum_values(grid, hbar):
    """Momentum eigenvalues hbar*k in FFT order (Nyquist at -pi hbar/dx)."""
    return _hbar(hbar) * grid.wavenumbers


def quantum_sobolev_norm(op, k, p, n):
    """||m op|| + ||m grad_x op|| + ||m grad_xi op|| with m = 1 + |p|^n.

    k = 0 keeps only the first term.
    """
    if k not in (0, 1):
        raise UnsupportedOrder(f"quantum Sobolev norms are defined for k in {{0, 1}}, got {k}")
    mult = 1.0 + np.abs(momentum_values(op.grid, op.hbar)) ** n
    terms = [op]
    if k == 1:
        terms += [quantum_gradient(op, "x"), quantum_gradient(op, "xi")]
    total = 0.0
    for t in terms:
        total += schatten_norm(op.like(apply_left_fourier(_matrix(t), mult), kind="general"), p)
    return total


def momentum_moment(op, k):
    """h Tr(|p|^k op)."""
    M = _matrix(op)
    pk = np.abs(momentum_values(op.grid, op.hbar)) ** k
    # <k|M|k> for unit plane waves
    Mh = np.fft.ifft(np.fft.fft(M, axis=0), axis=1)
    return float(op.h * np.sum(pk * np.real(np.diag(Mh))))


def operator_function(op, func, clamp=True):
    """Apply ``func`` to the eigenvalues of a Hermitian operator."""
    M = _matrix(op)
    lam, U = np.linalg.eigh(0.5 * (M + M.conj().T))
    if clamp:
        lam = np.maximum(lam, 0.0)
    return op.like((U * func(lam)) @ U.conj().T, kind="general")


def operator_sqrt(op):
    return operator_function(op, np.sqrt)


# Fourier transform of the Wigner function ------------------------------------

def dual_grid(grid):
    """Frequencies (y_k, w_l) in FFT order: y_k = k/L, w_l = l/(n dv)."""
    n = grid.n_x
    return _signed(n) / grid.length_x, _signed(n) / (n * grid.dv)


def fourier_trace_grid(op):
    """h Tr(exp(-2 i pi (y x + w p)) op) on the full dual grid, FFT order.

    Evaluated through the displacement operators: the exponential shifts
    by l cells and multiplies by a phase.
    """
    M = _matrix(op)
    n = op.n
    grid = op.grid
    a = np.arange(n)
    # E[l, a] = M[(a - l) % n, a]
    E = M[(a[None, :] - a[:, None]) % n, a[None, :]]
    k = np.arange(n)
    ph = np.exp(-2j * np.pi * np.outer(k, grid.x) / grid.length_x)  # (k, a)
    F = ph @ E.T  # (k, l)
    kk = _signed(n)
    F *= np.exp(1j * np.pi * np.outer(kk, kk) / n)
    return op.h * F


def fourier_of_wigner(op, y, w):
    """h Tr(exp(-2 i pi (y x + w p)) op) at one dual-grid point.

    (y, w) must lie on the dual grid (y L and w n dv integers).
    """
    grid = op.grid
    kk = y * grid.length_x
    ll = w * grid.n_x * grid.dv
    ki, li = int(round(kk)), int(round(ll))
    if abs(kk - ki) > 1e-9 or abs(ll - li) > 1e-9:
        raise ValueError("(y, w) is not on the dual grid")
    M = _matrix(op)
    n = op.n
    a = np.arange(n)
    diag = M[(a - li) % n, a]
    val = np.sum(np.exp(-2j * np.pi * ki * grid.x / grid.length_x) * diag)
    return complex(op.h * np.exp(1j * np.pi * ki * li / n) * val)


def phase_fourier(vals, grid):
    """Integral of exp(-2 i pi (y x + w xi)) f over the grid, FFT order."""
    n = grid.n_x
    alt = (-1.0) ** np.arange(n)
    return np.fft.fft2(vals) * np.outer(alt, alt) * grid.cell


def nyquist_mask(n):
    """True on dual-grid entries away from the Nyquist row and column."""
    m = np.ones((n, n), dtype=bool)
    m[n // 2, :] = False
    m[:, n // 2] = False
    return m
