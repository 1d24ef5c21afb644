"""Phase-space grids, kinetic densities, interaction kernels and force fields.

Conventions
-----------
Space is the periodic box [-L/2, L/2)^d sampled at x_j = -L/2 + j*dx and
velocity is sampled at xi_m = -v_max + m*dv.  Grid functions on phase space
have shape ``(n_x,)*d + (n_v,)*d``.  Convolutions are circular and a
uniform neutralizing background is removed from the density first, so the
force of a constant density is zero.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import GridIncompatible, GridMismatch, NegativeDensity, KslabError

log = logging.getLogger(__name__)

NEGATIVE_TOL = 1e-12


def _is_pow2(n):
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class PhaseGrid:
    """Uniform periodic discretization of position x velocity space.

    Parameters
    ----------
    n_x, n_v : int
        Points per spatial and per velocity axis, powers of two and >= 8.
    length_x : float
        Spatial period L.
    v_max : float
        Velocity half-width; the velocity axis covers [-v_max, v_max).
    dim : int
        Spatial dimension d.
    """

    n_x: int
    n_v: int
    length_x: float
    v_max: float
    dim: int = 1

    def __post_init__(self):
        for name in ("n_x", "n_v"):
            val = getattr(self, name)
            if int(val) != val or not _is_pow2(int(val)) or val < 8:
                raise ValueError(f"{name} must be a power of two >= 8, got {val}")
        if not (self.length_x > 0 and self.v_max > 0):
            raise ValueError("length_x and v_max must be positive")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError("dim must be a positive integer")

    @classmethod
    def for_hbar(cls, n, length_x, hbar, dim=1):
        """Grid whose velocity axis is the momentum grid of ``hbar``."""
        return cls(n, n, float(length_x), math.pi * hbar * n / length_x, dim)

    @property
    def dx(self):
        return self.length_x / self.n_x

    @property
    def dv(self):
        return 2.0 * self.v_max / self.n_v

    @property
    def x(self):
        """Coordinates along one spatial axis."""
        return -0.5 * self.length_x + self.dx * np.arange(self.n_x)

    @property
    def v(self):
        """Coordinates along one velocity axis."""
        return -self.v_max + self.dv * np.arange(self.n_v)

    @property
    def spatial_shape(self):
        return (self.n_x,) * self.dim

    @property
    def shape(self):
        return (self.n_x,) * self.dim + (self.n_v,) * self.dim

    @property
    def cell_x(self):
        return self.dx ** self.dim

    @property
    def cell(self):
        """Phase-space cell volume dx^d dv^d."""
        return (self.dx * self.dv) ** self.dim

    @property
    def wavenumbers(self):
        """Angular wavenumbers along one spatial axis, FFT order."""
        return 2.0 * np.pi * np.fft.fftfreq(self.n_x, d=self.dx)

    def mesh(self):
        """Open broadcastable coordinate arrays (x_1..x_d, xi_1..xi_d)."""
        d = self.dim
        out = []
        for k in range(2 * d):
            shape = [1] * (2 * d)
            shape[k] = self.n_x if k < d else self.n_v
            out.append((self.x if k < d else self.v).reshape(shape))
        return out

    def compatible_hbar(self, hbar, rtol=1e-12):
        return (self.n_v == self.n_x
                and abs(self.v_max - math.pi * hbar * self.n_x / self.length_x)
                <= rtol * self.v_max)

    def check_hbar(self, hbar):
        """Raise GridIncompatible unless velocity grid = momentum grid of hbar."""
        if not self.compatible_hbar(hbar):
            raise GridIncompatible(
                f"v_max = pi*hbar*n_x/L requires v_max={math.pi * hbar * self.n_x / self.length_x!r}"
                f" and n_v = n_x; got v_max={self.v_max!r}, n_x={self.n_x}, n_v={self.n_v}")


def min_image(delta, period):
    """Wrap displacements into [-period/2, period/2)."""
    return (np.asarray(delta) + 0.5 * period) % period - 0.5 * period


def periodic_sq_dist(a, b, period):
    d = min_image(np.asarray(a) - np.asarray(b), period)
    return d * d


class KineticDensity:
    """Nonnegative phase-space density on a :class:`PhaseGrid`.

    Values in [-1e-12, 0) are clamped to 0; anything more negative raises
    :class:`NegativeDensity`.  If ``mass`` is given the sampled mass must
    match it within 1e-10 relative.
    """

    __slots__ = ("grid", "values", "time")

    def __init__(self, grid, values, time=0.0, mass=None):
        vals = np.array(values, dtype=float)
        if vals.shape != grid.shape:
            raise GridMismatch(f"values shape {vals.shape} != grid shape {grid.shape}")
        if not np.all(np.isfinite(vals)):
            raise KslabError("density contains non-finite values")
        vmin = vals.min() if vals.size else 0.0
        if vmin < -NEGATIVE_TOL:
            raise NegativeDensity(f"min value {vmin:.3e} below -1e-12")
        if vmin < 0:
            np.maximum(vals, 0.0, out=vals)
        vals.setflags(write=False)
        self.grid = grid
        self.values = vals
        self.time = float(time)
        if mass is not None:
            m = self.mass
            if abs(m - mass) > 1e-10 * max(abs(mass), 1e-300):
                raise KslabError(f"sampled mass {m!r} differs from declared {mass!r}")

    @classmethod
    def clamped(cls, grid, values, time=0.0):
        """Build from solver output, clamping any undershoot and logging it."""
        vals = np.array(values, dtype=float)
        neg = vals < 0
        if neg.any():
            lost = -vals[neg].sum() * grid.cell
            log.debug("clamped %d negative cells, mass change %.3e", int(neg.sum()), lost)
            vals[neg] = 0.0
        return cls(grid, vals, time)

    @property
    def mass(self):
        return float(np.sum(self.values) * self.grid.cell)

    def with_values(self, values, time=None):
        return KineticDensity.clamped(self.grid, values, self.time if time is None else time)

    def __repr__(self):
        return f"KineticDensity(grid={self.grid}, t={self.time}, mass={self.mass:.6g})"


def _values(f):
    return f.values if isinstance(f, KineticDensity) else np.asarray(f, dtype=float)


def spatial_density(f, grid=None):
    """rho(x) = sum_xi f(x, xi) dv^d."""
    grid = f.grid if isinstance(f, KineticDensity) else grid
    vals = _values(f)
    axes = tuple(range(grid.dim, 2 * grid.dim))
    return np.sum(vals, axis=axes) * grid.dv ** grid.dim


def _offsets(grid):
    """Minimal-image offsets per spatial axis in FFT order, seam at -L/2."""
    n, dx = grid.n_x, grid.dx
    k = np.arange(n)
    k = np.where(k >= n // 2, k - n, k)
    return k * dx


def _offset_mesh(grid):
    off = _offsets(grid)
    d = grid.dim
    return [off.reshape([-1 if a == k else 1 for a in range(d)]) for k in range(d)]


def _kvec(grid):
    kk = grid.wavenumbers
    d = grid.dim
    return [kk.reshape([-1 if a == k else 1 for a in range(d)]) for k in range(d)]


class InteractionKernel:
    """Pair interaction K on the periodic spatial grid.

    Use the named constructors.  ``samples`` holds K at minimal-image offsets
    (FFT order) and ``grad_samples`` holds grad K with shape ``(d,) + spatial``.
    Spectral kernels (``coulomb1d``, ``coulomb3d``) are defined by their
    Fourier symbol instead.  The ``harmonic`` kernel is the free-space
    quadratic sign*w^2|x|^2/2, evaluated without periodization; it is meant
    for data localized well inside the box.
    """

    def __init__(self, grid, kind, sign=1, samples=None, grad_samples=None,
                 symbol=None, params=None, even=True):
        if sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")
        self.grid = grid
        self.kind = kind
        self.sign = sign
        self.params = dict(params or {})
        self.symbol = symbol
        self.samples = samples
        self.grad_samples = grad_samples
        if grad_samples is not None:
            grad_samples.setflags(write=False)
            if even:
                self._check_odd(grad_samples)
        if samples is not None:
            samples.setflags(write=False)
        self.periodic = kind != "harmonic"

    @staticmethod
    def _check_odd(g):
        d = g.shape[0]
        flipped = g
        for ax in range(1, d + 1):
            flipped = np.roll(np.flip(flipped, axis=ax), 1, axis=ax)
        scale = max(np.abs(g).max(), 1e-300)
        if np.abs(g + flipped).max() > 1e-12 * scale:
            raise KslabError("grad_samples of an even kernel are not antisymmetric")

    # constructors ---------------------------------------------------------

    @classmethod
    def _radial(cls, grid, kind, sign, prof, dprof, params):
        om = _offset_mesh(grid)
        r2 = sum(o * o for o in om)
        r = np.sqrt(r2)
        samples = sign * prof(r) * np.ones(grid.spatial_shape)
        with np.errstate(invalid="ignore", divide="ignore"):
            radial_d = np.where(r > 0, sign * dprof(r) / np.where(r > 0, r, 1.0), 0.0)
        grad = np.empty((grid.dim,) + grid.spatial_shape)
        n = grid.n_x
        for k in range(grid.dim):
            g = radial_d * om[k] * np.ones(grid.spatial_shape)
            # the seam offset -L/2 has no antisymmetric partner on the grid
            idx = [slice(None)] * grid.dim
            idx[k] = n // 2
            g[tuple(idx)] = 0.0
            grad[k] = g
        return cls(grid, kind, sign, samples=samples, grad_samples=grad, params=params)

    @classmethod
    def regularized_coulomb(cls, grid, eps, sign=1):
        """K = sign / sqrt(|x|^2 + eps^2), requires eps >= dx."""
        if eps < grid.dx * (1 - 1e-12):
            raise ValueError(f"eps={eps} is below dx={grid.dx}; singularity under-resolved")
        return cls._radial(grid, "regularized_coulomb", sign,
                           lambda r: 1.0 / np.sqrt(r * r + eps * eps),
                           lambda r: -r / (r * r + eps * eps) ** 1.5,
                           {"eps": float(eps)})

    @classmethod
    def gaussian(cls, grid, sigma, sign=1, amplitude=1.0):
        """K = sign * amplitude * exp(-|x|^2 / (2 sigma^2))."""
        s2 = sigma * sigma
        return cls._radial(grid, "gaussian", sign,
                           lambda r: amplitude * np.exp(-r * r / (2 * s2)),
                           lambda r: -amplitude * r / s2 * np.exp(-r * r / (2 * s2)),
                           {"sigma": float(sigma), "amplitude": float(amplitude)})

    @classmethod
    def zero(cls, grid):
        z = np.zeros(grid.spatial_shape)
        return cls(grid, "zero", 1, samples=z, grad_samples=np.zeros((grid.dim,) + grid.spatial_shape))

    @classmethod
    def _spectral(cls, grid, kind, sign, sym, params=None):
        kv = _kvec(grid)
        k2 = sum(k * k for k in kv) * np.ones(grid.spatial_shape)
        with np.errstate(divide="ignore"):
            symb = np.where(k2 > 0, sign * sym / np.where(k2 > 0, k2, 1.0), 0.0)
        cx = grid.cell_x
        samples = np.fft.ifftn(symb).real / cx
        grad = np.empty((grid.dim,) + grid.spatial_shape)
        n = grid.n_x
        for k in range(grid.dim):
            kk = kv[k] * np.ones(grid.spatial_shape)
            nyq = [slice(None)] * grid.dim
            nyq[k] = n // 2
            kk[tuple(nyq)] = 0.0
            grad[k] = np.fft.ifftn(1j * kk * symb).real / cx
        return cls(grid, kind, sign, samples=samples, grad_samples=grad, symbol=symb,
                   params=params)

    @classmethod
    def coulomb1d(cls, grid, sign=1):
        """One-dimensional Poisson kernel, Fourier symbol sign/k^2."""
        if grid.dim != 1:
            raise ValueError("coulomb1d needs dim = 1")
        return cls._spectral(grid, "coulomb1d", sign, 1.0)

    @classmethod
    def coulomb3d(cls, grid, sign=1):
        """Three-dimensional Coulomb kernel sign/|x|, Fourier symbol 4*pi*sign/|k|^2."""
        if grid.dim != 3:
            raise ValueError("coulomb3d needs dim = 3")
        return cls._spectral(grid, "coulomb3d", sign, 4.0 * np.pi)

    @classmethod
    def harmonic(cls, grid, omega=1.0, sign=1):
        """Free-space quadratic kernel sign * omega^2 |x|^2 / 2."""
        return cls(grid, "harmonic", sign, params={"omega": float(omega)})

    @classmethod
    def custom(cls, grid, samples, grad_samples=None, sign=1, even=True):
        """Kernel from a table of samples at minimal-image offsets (FFT order).

        Without ``grad_samples`` the gradient is taken spectrally.
        """
        samples = np.array(samples, dtype=float).reshape(grid.spatial_shape)
        if grad_samples is None:
            kv = _kvec(grid)
            sh = np.fft.fftn(samples)
            grad = np.empty((grid.dim,) + grid.spatial_shape)
            for k in range(grid.dim):
                kk = kv[k] * np.ones(grid.spatial_shape)
                nyq = [slice(None)] * grid.dim
                nyq[k] = grid.n_x // 2
                kk[tuple(nyq)] = 0.0
                grad[k] = np.fft.ifftn(1j * kk * sh).real
        else:
            grad = np.array(grad_samples, dtype=float).reshape((grid.dim,) + grid.spatial_shape)
        return cls(grid, "custom", sign, samples=sign * samples, grad_samples=sign * grad,
                   even=even)

    # evaluation -------------------------------------------------------------

    def _check(self, rho):
        rho = np.asarray(rho, dtype=float)
        if rho.shape != self.grid.spatial_shape:
            raise GridMismatch(f"density shape {rho.shape} != kernel grid {self.grid.spatial_shape}")
        return rho

    def _harmonic_moments(self, rho):
        g = self.grid
        xs = np.meshgrid(*([g.x] * g.dim), indexing="ij")
        mass = np.sum(rho) * g.cell_x
        m1 = [np.sum(rho * xk) * g.cell_x for xk in xs]
        m2 = np.sum(rho * sum(xk * xk for xk in xs)) * g.cell_x
        return xs, mass, m1, m2

    def potential(self, rho):
        """V = K * (rho - mean rho) on the spatial grid."""
        rho = self._check(rho)
        g = self.grid
        if self.kind == "harmonic":
            xs, mass, m1, m2 = self._harmonic_moments(rho)
            w2 = self.params["omega"] ** 2
            r2 = sum(xk * xk for xk in xs)
            lin = sum(xk * mk for xk, mk in zip(xs, m1))
            return self.sign * 0.5 * w2 * (mass * r2 - 2 * lin + m2)
        rh = np.fft.fftn(rho - rho.mean())
        if self.symbol is not None:
            return np.fft.ifftn(self.symbol * rh).real
        return np.fft.ifftn(np.fft.fftn(self.samples) * rh).real * g.cell_x

    def force(self, rho):
        """E = -grad(K * (rho - mean rho)), shape ``(d,) + spatial``."""
        rho = self._check(rho)
        g = self.grid
        if self.kind == "harmonic":
            xs, mass, m1, _ = self._harmonic_moments(rho)
            w2 = self.params["omega"] ** 2
            return np.array([-self.sign * w2 * (mass * xk - mk) for xk, mk in zip(xs, m1)])
        rh = np.fft.fftn(rho - rho.mean())
        out = np.empty((g.dim,) + g.spatial_shape)
        for k in range(g.dim):
            out[k] = -np.fft.ifftn(np.fft.fftn(self.grad_samples[k]) * rh).real * g.cell_x
        return out

    def potential_halfgrid(self, rho):
        """V and dV/dx at x_0 + k*dx/2, k = 0..2n-1 (d = 1).

        Periodic kernels are interpolated trigonometrically; the harmonic
        kernel is evaluated in closed form.
        """
        g = self.grid
        if g.dim != 1:
            raise ValueError("half-grid evaluation is one-dimensional")
        xh = g.x[0] + 0.5 * g.dx * np.arange(2 * g.n_x)
        V = self.potential(rho)
        dV = -self.force(rho)[0]
        if self.kind == "harmonic":
            rho = self._check(rho)
            _, mass, m1, m2 = self._harmonic_moments(rho)
            w2 = self.sign * self.params["omega"] ** 2
            return (0.5 * w2 * (mass * xh * xh - 2 * m1[0] * xh + m2),
                    w2 * (mass * xh - m1[0]))
        out = []
        for arr in (V, dV):
            fine = np.empty(2 * g.n_x)
            fine[0::2] = arr
            fine[1::2] = half_shift(arr, 0.5)
            out.append(fine)
        return out[0], out[1]

    def potential_function(self, rho):
        """Callables (V, dV) valid at arbitrary real positions (d = 1)."""
        g = self.grid
        if self.kind == "harmonic":
            rho = self._check(rho)
            _, mass, m1, m2 = self._harmonic_moments(rho)
            w2 = self.sign * self.params["omega"] ** 2
            return (lambda x: 0.5 * w2 * (mass * x * x - 2 * m1[0] * x + m2),
                    lambda x: w2 * (mass * x - m1[0]))
        V = self.potential(rho)
        dV = -self.force(rho)[0]
        return trig_interpolant(V, g), trig_interpolant(dV, g)

    def __repr__(self):
        return f"InteractionKernel({self.kind!r}, sign={self.sign}, params={self.params})"


def half_shift(a, s, axis=0):
    """Trigonometric interpolation of a periodic sequence at index + s.

    The Nyquist mode uses the real-preserving multiplier cos(pi*s).
    """
    a = np.asarray(a)
    n = a.shape[axis]
    k = np.fft.fftfreq(n) * n
    mult = np.exp(2j * np.pi * k * s / n)
    mult[n // 2] = np.cos(np.pi * s)
    shape = [1] * a.ndim
    shape[axis] = n
    out = np.fft.ifft(np.fft.fft(a, axis=axis) * mult.reshape(shape), axis=axis)
    return out.real if np.isrealobj(a) else out


def trig_interpolant(samples, grid):
    """Periodic trigonometric interpolant of grid samples (d = 1)."""
    n = grid.n_x
    c = np.fft.fft(samples) / n
    k = np.fft.fftfreq(n) * n
    c[n // 2] *= 0.5  # split the Nyquist mode symmetrically

    def ev(x):
        x = np.asarray(x, dtype=float)
        t = 2 * np.pi * (x - grid.x[0]) / grid.length_x
        ph = np.exp(1j * np.multiply.outer(t, k))
        val = ph @ c
        val = val + c[n // 2] * np.exp(1j * t * (n // 2))
        return val.real

    return ev


def force_field(rho, kernel, grid=None):
    """Self-consistent force E = -grad(K * (rho - mean rho)).

    Parameters
    ----------
    rho : ndarray
        Spatial density on ``kernel.grid``.
    kernel : InteractionKernel
    grid : PhaseGrid, optional
        Grid on which ``rho`` was sampled; checked against the kernel grid.

    Returns
    -------
    ndarray of shape ``(d,) + spatial``
    """
    if grid is not None and (grid.n_x != kernel.grid.n_x or grid.length_x != kernel.grid.length_x
                             or grid.dim != kernel.grid.dim):
        raise GridMismatch("kernel grid differs from density grid")
    return kernel.force(rho)


def potential_field(rho, kernel):
    """Potential V = K * (rho - mean rho)."""
    return kernel.potential(rho)
