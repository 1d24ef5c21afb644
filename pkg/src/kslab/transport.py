"""Optimal transport between phase-space densities and semiclassical couplings.

Classical side: exact transport by a network simplex (compiled kernel),
entropic transport by log-domain Sinkhorn with epsilon scaling and
debiasing, and a certified W2 bracket for densities too large for the exact
solver.  Quantum side: atomic operator-valued couplings, the semiclassical
cost and a bracket for the pseudometric W_hbar.

All phase-space costs use the periodic squared distance with period L in x
and 2 v_max in xi.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import _kernels
from .errors import MarginalMismatch, MassMismatch, NonConvergence
from .phase_space import KineticDensity, min_image
from .quantum import (DensityOperator, coherent_states, husimi_transform, operator_sqrt,
                      quantum_gradient, schatten_norm, momentum_values)

log = logging.getLogger(__name__)

MAX_EXACT_ATOMS = 2000
ATOM_THRESHOLD = 1e-12


# atoms and costs -----------------------------------------------------------------

@dataclass
class Atoms:
    """Weighted point cloud; ``period`` is per coordinate (None = not periodic)."""

    points: np.ndarray
    weights: np.ndarray
    period: tuple | None = None
    dropped: float = 0.0

    @property
    def mass(self):
        return float(np.sum(self.weights))


def grid_period(grid):
    return (grid.length_x,) * grid.dim + (2.0 * grid.v_max,) * grid.dim


def phase_points(grid):
    """All grid nodes as an (N, 2d) array, C order matching ``grid.shape``."""
    axes = [grid.x] * grid.dim + [grid.v] * grid.dim
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def atomize(f, threshold=ATOM_THRESHOLD):
    """Cells with value above ``threshold * max`` as weighted atoms.

    The dropped mass is recorded and the weights rescaled to the full mass.
    """
    vals = f.values.ravel()
    total = float(np.sum(vals) * f.grid.cell)
    keep = vals > threshold * vals.max() if vals.size and vals.max() > 0 else np.zeros(vals.size, bool)
    w = vals[keep] * f.grid.cell
    dropped = total - float(np.sum(w))
    if w.size:
        w = w * (total / np.sum(w))
    return Atoms(phase_points(f.grid)[keep], w, grid_period(f.grid), dropped)


def cost_matrix(P, Q, period=None, p=2):
    """|z - z'|^p with periodic minimal images where ``period`` is given."""
    P = np.atleast_2d(P)
    Q = np.atleast_2d(Q)
    sq = np.zeros((P.shape[0], Q.shape[0]))
    for k in range(P.shape[1]):
        dk = P[:, k][:, None] - Q[:, k][None, :]
        if period is not None and period[k] is not None:
            dk = min_image(dk, period[k])
        sq += dk * dk
    if p == 2:
        return sq
    return np.sqrt(sq) ** p


def _as_atoms(mu, period):
    if isinstance(mu, KineticDensity):
        return atomize(mu)
    if isinstance(mu, Atoms):
        return mu
    pts, w = mu
    return Atoms(np.atleast_2d(np.asarray(pts, dtype=float)), np.asarray(w, dtype=float), period)


# exact transport -------------------------------------------------------------------

@dataclass
class TransportPlan:
    rows: np.ndarray
    cols: np.ndarray
    flows: np.ndarray
    u: np.ndarray
    v: np.ndarray
    cost: float
    iterations: int

    def dense(self, m, n):
        P = np.zeros((m, n))
        np.add.at(P, (self.rows, self.cols), self.flows)
        return P


def exact_transport(a, b, C, max_iter=None):
    """Optimal plan for marginals a, b and cost C (network simplex).

    Raises
    ------
    MassMismatch, NonConvergence
    """
    a = np.ascontiguousarray(a, dtype=float)
    b = np.ascontiguousarray(b, dtype=float)
    C = np.ascontiguousarray(C, dtype=float)
    if abs(a.sum() - b.sum()) > 1e-10 * max(a.sum(), b.sum()):
        raise MassMismatch(f"masses differ: {a.sum()!r} vs {b.sum()!r}")
    m, n = C.shape
    if max_iter is None:
        max_iter = 50 * (m + n) * int(math.log2(m + n) + 1) + 1000
    cmax = float(np.abs(C).max()) if C.size else 0.0
    tol = 1e-13 * max(cmax, 1e-300)
    rows, cols, flows, u, v, it, ok = _kernels.network_simplex(a, b, C, int(max_iter), tol)
    if not ok:
        raise NonConvergence(f"network simplex did not converge in {max_iter} pivots")
    cost = float(np.sum(flows * C[rows, cols]))
    return TransportPlan(rows, cols, flows, u, v, cost, it)


# entropic transport ----------------------------------------------------------------

@dataclass
class SinkhornResult:
    f: np.ndarray
    g: np.ndarray
    eps: float
    value: float        # entropic objective <a,f> + <b,g>
    plan_cost: float    # <P, C>
    upper: float        # cost of the rounded feasible plan
    lower: float        # dual value after a c-transform
    iterations: int


def _round_plan(P, a, b):
    """Project a near-feasible plan onto the transport polytope (Altschuler et al.)."""
    r = P.sum(1)
    x = np.minimum(a / np.where(r > 0, r, 1), 1.0)
    P = P * x[:, None]
    c = P.sum(0)
    y = np.minimum(b / np.where(c > 0, c, 1), 1.0)
    P = P * y[None, :]
    er = a - P.sum(1)
    ec = b - P.sum(0)
    s = er.sum()
    if s > 0:
        P = P + np.outer(er, ec) / s
    return P


def _relaxation(rate):
    """Optimal over-relaxation for a linear contraction factor ``rate``."""
    return min(1.95, 2.0 / (1.0 + math.sqrt(max(1.0 - rate, 0.0))))


def sinkhorn(a, b, C, eps, tol=1e-6, max_iter=10_000, eps0=None, scaling=0.5, accelerate=True):
    """Log-domain Sinkhorn with epsilon scaling down to ``eps``.

    Each epsilon level runs until the column-marginal L1 error is below
    ``tol * mass`` or ``max_iter`` iterations (then NonConvergence).

    With ``accelerate`` the updates are over-relaxed, f <- (1 - w) f + w T(f),
    with w set from the observed contraction rate of the plain iteration.
    A level falls back to w = 1 if the marginal error grows tenfold.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    la, lb = np.log(a), np.log(b)
    mass = a.sum()
    cmax = float(C.max()) if C.size else 1.0
    e = max(eps0 if eps0 is not None else cmax, eps)
    f = np.zeros(a.size)
    g = np.zeros(b.size)
    total = 0
    while True:
        w = 1.0
        best = last = np.inf
        frozen = not accelerate
        for it in range(max_iter):
            g = (1 - w) * g - w * e * logsumexp((f[:, None] - C) / e + la[:, None], axis=0)
            f = (1 - w) * f - w * e * logsumexp((g[None, :] - C) / e + lb[None, :], axis=1)
            if it % 10 == 9 or it == max_iter - 1:
                logP = (f[:, None] + g[None, :] - C) / e + la[:, None] + lb[None, :]
                col = np.exp(logsumexp(logP, axis=0))
                err = np.abs(col - b).sum()
                if err <= tol * mass:
                    break
                if w > 1.0 and err > 10.0 * best:
                    w, frozen = 1.0, True
                elif not frozen and w == 1.0 and it >= 49 and 0 < err < last:
                    w = _relaxation((err / last) ** 0.1)
                best = min(best, err)
                last = err
        else:
            raise NonConvergence(f"Sinkhorn hit {max_iter} iterations at eps={e:.3g}")
        total += it + 1
        if e <= eps:
            break
        e = max(e * scaling, eps)
    P = np.exp((f[:, None] + g[None, :] - C) / e + la[:, None] + lb[None, :])
    plan_cost = float(np.sum(P * C))
    upper = float(np.sum(_round_plan(P, a, b) * C))
    gc = np.min(C - f[:, None], axis=0)
    lower = float(a @ f + b @ gc)
    return SinkhornResult(f, g, e, float(a @ f + b @ g), plan_cost, upper, lower, total)


def sinkhorn_symmetric(a, C, eps, tol=1e-6, max_iter=10_000, scaling=0.5):
    """Entropic self-transport value OT_eps(a, a) by the averaged fixed point.

    The symmetric potential solves f = T(f) with
    T(f) = -eps * logsumexp((f - C) / eps + log a); iterating f <- (f + T f) / 2
    converges much faster than alternating updates.
    """
    a = np.asarray(a, dtype=float)
    la = np.log(a)
    e = max(float(C.max()) if C.size else 1.0, eps)
    f = np.zeros(a.size)
    while True:
        for it in range(max_iter):
            tf = -e * logsumexp((f[None, :] - C) / e + la[None, :], axis=1)
            if np.abs(tf - f).max() <= tol * e and it > 0:
                f = tf
                break
            f = 0.5 * (f + tf)
        else:
            raise NonConvergence(f"symmetric Sinkhorn hit {max_iter} iterations at eps={e:.3g}")
        if e <= eps:
            break
        e = max(e * scaling, eps)
    return 2.0 * float(a @ f)


def sinkhorn_divergence(a, b, Cab, Caa, Cbb, eps, **kw):
    """Debiased entropic cost S = OT(a,b) - (OT(a,a) + OT(b,b)) / 2."""
    rab = sinkhorn(a, b, Cab, eps, **kw)
    kw.pop("eps0", None)
    kw.pop("accelerate", None)
    oaa = sinkhorn_symmetric(a, Caa, eps, **kw)
    obb = sinkhorn_symmetric(b, Cbb, eps, **kw)
    return rab.value - 0.5 * (oaa + obb), rab


@dataclass
class WassersteinResult:
    """W_p estimate with a certified bracket [lower, upper]."""

    value: float
    lower: float
    upper: float
    method: str
    p: float
    eps: float | None = None
    gap: float = 0.0
    plan: TransportPlan | None = None
    info: dict = field(default_factory=dict)

    def __float__(self):
        return float(self.value)


def wasserstein(mu, nu, p=2, method="exact", period=None, eps=None, **kw):
    """Wasserstein distance W_p between two measures of equal mass.

    Parameters
    ----------
    mu, nu : KineticDensity, Atoms or (points, weights)
        Densities are thresholded at 1e-12 * max and renormalized.
    method : {"exact", "entropic"}
    eps : float, optional
        Final entropic regularization (default 2e-3 * mean cost).

    Returns
    -------
    WassersteinResult
        ``value`` is W_p; ``lower``/``upper`` bracket the exact W_p.
    """
    A = _as_atoms(mu, period)
    B = _as_atoms(nu, period)
    per = period if period is not None else A.period
    if abs(A.mass - B.mass) > 1e-10 * max(A.mass, B.mass):
        raise MassMismatch(f"masses differ: {A.mass!r} vs {B.mass!r}")
    C = cost_matrix(A.points, B.points, per, p)
    if method == "exact":
        if max(len(A.weights), len(B.weights)) > MAX_EXACT_ATOMS:
            raise ValueError(f"exact transport is limited to {MAX_EXACT_ATOMS} atoms per side")
        plan = exact_transport(A.weights, B.weights, C)
        w = max(plan.cost, 0.0) ** (1.0 / p)
        return WassersteinResult(w, w, w, "exact", p, plan=plan,
                                 info={"atoms": (len(A.weights), len(B.weights))})
    if method != "entropic":
        raise ValueError(f"unknown method {method!r}")
    if eps is None:
        eps = 2e-3 * float(np.mean(C))
    Caa = cost_matrix(A.points, A.points, per, p)
    Cbb = cost_matrix(B.points, B.points, per, p)
    S, rab = sinkhorn_divergence(A.weights, B.weights, C, Caa, Cbb, eps, **kw)
    lo = max(rab.lower, 0.0) ** (1.0 / p)
    hi = max(rab.upper, 0.0) ** (1.0 / p)
    return WassersteinResult(max(S, 0.0) ** (1.0 / p), lo, hi, "entropic", p, eps=rab.eps,
                             gap=rab.upper - rab.lower,
                             info={"plan_cost": rab.plan_cost, "iterations": rab.iterations,
                                   "entropic_value": rab.value})


# certified W2 bracket on a phase grid ------------------------------------------

def _blocks(vals, grid, c):
    """Block masses, barycenters and within-block second moments (d = 1)."""
    n0, n1 = vals.shape
    w = vals.reshape(n0 // c, c, n1 // c, c) * grid.cell
    X = (grid.x.reshape(n0 // c, c))[:, :, None, None]
    V = (grid.v.reshape(n1 // c, c))[None, None, :, :]
    m = w.sum(axis=(1, 3))
    safe = np.where(m > 0, m, 1.0)
    bx = (w * X).sum(axis=(1, 3)) / safe
    bv = (w * V).sum(axis=(1, 3)) / safe
    # default barycenter of empty blocks: block centre
    cx = X.mean(axis=1)[:, 0, 0][:, None] * np.ones_like(m)
    cv = V.mean(axis=3)[0, 0, :][None, :] * np.ones_like(m)
    bx = np.where(m > 0, bx, cx)
    bv = np.where(m > 0, bv, cv)
    var = ((w * (X - bx[:, None, :, None]) ** 2).sum(axis=(1, 3))
           + (w * (V - bv[:, None, :, None]) ** 2).sum(axis=(1, 3)))
    return m, bx, bv, var


def _axis_min(lo, step, cnt, y, gcoef, period):
    """min over x in {lo + k step, k < cnt} of d(x, y)^2 - gcoef * x (two images of y)."""
    best = None
    base = y + period * np.round((lo + 0.5 * step * (cnt - 1) - y) / period)
    for img in (base - period, base, base + period):
        xstar = img + 0.5 * gcoef
        k = np.clip(np.round((xstar - lo) / step), 0, cnt - 1)
        x = lo + k * step
        val = (x - img) ** 2 - gcoef * x
        best = val if best is None else np.minimum(best, val)
    return best


def grid_w2_bracket(f, g, max_atoms=MAX_EXACT_ATOMS, chunk=2048, mass_rtol=1e-6):
    """Certified bounds lower <= W2(f, g) <= upper for densities on one grid.

    Small supports are solved exactly.  Otherwise cells are merged into c x c
    blocks and the block problem is solved exactly; the upper bound uses the
    within-block product coupling (block cost plus within-block variances) and
    the lower bound is the dual value of the fine-grid c-transform of the
    block potential, extended affinely with the slope 2 (z - T z).

    Masses may differ by ``mass_rtol`` (e.g. solver round-off); g is then
    rescaled to the mass of f and both squared bounds are widened by
    diam^2 |mass(f) - mass(g)|.
    """
    grid = f.grid
    if grid.dim != 1:
        raise ValueError("grid_w2_bracket is implemented for d = 1")
    per = grid_period(grid)
    fa, ga = f.values, g.values
    defect = abs(f.mass - g.mass)
    if defect > mass_rtol * max(f.mass, g.mass):
        raise MassMismatch(f"masses differ: {f.mass!r} vs {g.mass!r}")
    if defect > 0:
        ga = ga * (f.mass / g.mass)
    thr = ATOM_THRESHOLD
    n = fa.shape[0]
    c = 1
    while True:
        mf, bxf, bvf, varf = _blocks(fa, grid, c)
        mg, bxg, bvg, varg = _blocks(ga, grid, c)
        kf = mf > thr * mf.max()
        kg = mg > thr * mg.max()
        if max(kf.sum(), kg.sum()) <= max_atoms or c == n:
            break
        c *= 2
    Pf = np.stack([bxf[kf], bvf[kf]], 1)
    Pg = np.stack([bxg[kg], bvg[kg]], 1)
    a = mf[kf] * (f.mass / mf[kf].sum())
    b = mg[kg] * (f.mass / mg[kg].sum())
    dropped = (f.mass - mf[kf].sum()) + (f.mass - mg[kg].sum())
    C = cost_matrix(Pf, Pg, per)
    plan = exact_transport(a, b, C)
    diam2 = (per[0] / 2) ** 2 + (per[1] / 2) ** 2
    upper2 = plan.cost + varf[kf].sum() + varg[kg].sum() + diam2 * (dropped + defect)
    if c == 1 and dropped == 0 and defect == 0:
        w = math.sqrt(max(plan.cost, 0.0))
        return w, w, {"block": 1, "atoms": (len(a), len(b))}

    # dual lower bound on the fine grid
    u = np.full(mf.shape, np.nan)
    u[kf] = plan.u
    gx = np.zeros(mf.shape)
    gv = np.zeros(mf.shape)
    P = plan.dense(len(a), len(b))
    row_mass = P.sum(1)
    disp_x = min_image(Pg[None, :, 0] - Pf[:, None, 0], per[0])
    disp_v = min_image(Pg[None, :, 1] - Pf[:, None, 1], per[1])
    tx = (P * disp_x).sum(1) / np.where(row_mass > 0, row_mass, 1)
    tv = (P * disp_v).sum(1) / np.where(row_mass > 0, row_mass, 1)
    gx[kf] = -2.0 * tx
    gv[kf] = -2.0 * tv
    # blocks outside the plan: c-transform of the block dual v
    if (~kf).any():
        Cd = cost_matrix(np.stack([bxf[~kf], bvf[~kf]], 1), Pg, per)
        u[~kf] = np.min(Cd - plan.v[None, :], axis=1)
    nb0, nb1 = mf.shape
    lo_x = grid.x.reshape(nb0, c)[:, 0]
    lo_v = grid.v.reshape(nb1, c)[:, 0]
    # flatten blocks
    B_lox = np.repeat(lo_x, nb1)
    B_lov = np.tile(lo_v, nb0)
    B_u = u.ravel()
    B_gx = gx.ravel()
    B_gv = gv.ravel()
    B_bx = bxf.ravel()
    B_bv = bvf.ravel()
    # phi(z) = u_B + gx (x - bx) + gv (v - bv); psi(z') = min_B min_z c(z,z') - phi(z)
    const = -B_u + B_gx * B_bx + B_gv * B_bv
    pts = phase_points(grid)
    gw = ga.ravel() * grid.cell
    live = gw > 0
    pts = pts[live]
    gw = gw[live]
    psi = np.empty(len(gw))
    for s in range(0, len(gw), chunk):
        y = pts[s:s + chunk]
        hx = _axis_min(B_lox[None, :], grid.dx, c, y[:, :1], B_gx[None, :], per[0])
        hv = _axis_min(B_lov[None, :], grid.dv, c, y[:, 1:], B_gv[None, :], per[1])
        psi[s:s + chunk] = np.min(hx + hv + const[None, :], axis=1)
    lower2 = float(np.sum(mf * u)) + float(gw @ psi) - diam2 * defect
    lower = math.sqrt(max(lower2, 0.0))
    upper = math.sqrt(max(upper2, 0.0))
    return min(lower, upper), upper, {"block": c, "atoms": (len(a), len(b)),
                                      "coarse_cost": plan.cost, "mass_defect": defect}


# classical couplings -------------------------------------------------------------

class DiscreteCoupling:
    """Atomic coupling: pairs (z1_i, z2_i) with weights w_i.

    Parameters
    ----------
    z1, z2 : (N, 2d) arrays
    w : (N,) nonnegative weights, sum 1 (checked to 1e-12 unless ``check`` is False)
    period : per-coordinate periods for costs
    marginals : (KineticDensity, KineticDensity), optional
        Declared marginals, checked by cell histograms to ``tol`` in L1.
    """

    def __init__(self, z1, z2, w, period=None, marginals=None, tol=1e-6, check=True):
        self.z1 = np.atleast_2d(np.asarray(z1, dtype=float))
        self.z2 = np.atleast_2d(np.asarray(z2, dtype=float))
        self.w = np.asarray(w, dtype=float)
        self.period = period
        if self.z1.shape != self.z2.shape or len(self.w) != len(self.z1):
            raise ValueError("atom arrays have inconsistent lengths")
        if check:
            if np.any(self.w < 0):
                raise MarginalMismatch("negative coupling weight")
            if abs(self.w.sum() - 1.0) > 1e-12:
                raise MarginalMismatch(f"weights sum to {self.w.sum()!r}, not 1")
        if marginals is not None:
            for pts, f in ((self.z1, marginals[0]), (self.z2, marginals[1])):
                err = histogram_l1(pts, self.w, f)
                if err > tol:
                    raise MarginalMismatch(f"marginal L1 error {err:.3e} > {tol}")

    def cost(self):
        """Sum_i w_i |z1_i - z2_i|^2 (periodic)."""
        d2 = np.zeros(len(self.w))
        for k in range(self.z1.shape[1]):
            dk = self.z1[:, k] - self.z2[:, k]
            if self.period is not None:
                dk = min_image(dk, self.period[k])
            d2 += dk * dk
        return float(self.w @ d2)

    def __len__(self):
        return len(self.w)


def histogram_l1(points, weights, f):
    """L1 distance between nearest-cell histogram of atoms and density f."""
    grid = f.grid
    ix = np.round((min_image(points[:, 0] - grid.x[0], grid.length_x) % grid.length_x)
                  / grid.dx).astype(int) % grid.n_x
    iv = np.round((points[:, 1] + grid.v_max) / grid.dv).astype(int) % grid.n_v
    H = np.zeros(grid.shape)
    np.add.at(H, (ix, iv), weights)
    return float(np.abs(H - f.values * grid.cell).sum())


def identity_coupling(f, threshold=0.0):
    """Diagonal coupling of f with itself on the grid cells."""
    vals = f.values.ravel() * f.grid.cell
    keep = vals > threshold * vals.max()
    pts = phase_points(f.grid)[keep]
    w = vals[keep] / vals[keep].sum()
    return DiscreteCoupling(pts, pts.copy(), w, grid_period(f.grid), check=False)


def translation_coupling(f, shift_cells):
    """Coupling of f with its translate by an integer number of cells in x."""
    grid = f.grid
    vals = f.values.ravel() * grid.cell
    keep = vals > 0
    pts = phase_points(grid)[keep]
    dst = pts.copy()
    j = np.round((pts[:, 0] - grid.x[0]) / grid.dx).astype(int)
    dst[:, 0] = grid.x[0] + ((j + shift_cells) % grid.n_x) * grid.dx
    w = vals[keep] / vals[keep].sum()
    return DiscreteCoupling(pts, dst, w, grid_period(grid), check=False)


# operator couplings --------------------------------------------------------------

class OperatorCoupling:
    """Atomic operator-valued coupling sum_i delta_{z_i} w_i |psi_i><psi_i| / h.

    Marginal 1 is the measure sum_i w_i delta_{z_i}; marginal 2 is the
    operator with matrix sum_i w_i |psi_i><psi_i| / h.

    Parameters
    ----------
    points : (N, 2) phase points
    states : (N, n) unit vectors in the grid basis
    weights : (N,) nonnegative
    grid, hbar : phase grid and Planck constant
    """

    def __init__(self, points, states, weights, grid, hbar):
        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        self.states = np.asarray(states, dtype=complex)
        self.weights = np.asarray(weights, dtype=float)
        self.grid = grid
        self.hbar = float(hbar)
        if np.any(self.weights < 0):
            from .errors import CouplingDegenerate
            raise CouplingDegenerate("negative cell trace in operator coupling")

    @property
    def h(self):
        return 2 * math.pi * self.hbar

    @property
    def mass(self):
        return float(self.weights.sum())

    def marginal_operator(self):
        S = self.states * np.sqrt(self.weights)[:, None]
        M = (S.T @ S.conj()) / self.h
        return DensityOperator(M, self.grid, self.hbar, kind="state", trace_target=self.mass,
                               validate=False)

    def marginal_errors(self, f=None, op=None):
        """(L1 error of marginal 1 vs f, trace-norm error of marginal 2 vs op)."""
        e1 = histogram_l1(self.points, self.weights, f) if f is not None else None
        e2 = None
        if op is not None:
            D = self.marginal_operator().matrix - op.matrix
            e2 = schatten_norm(op.like(D, kind="general"), 1)
        return e1, e2

    def with_atoms(self, points, states):
        return OperatorCoupling(points, states, self.weights, self.grid, self.hbar)


def _cost_terms(points, states, grid, hbar):
    """Per-atom <psi| d(X - x)^2 + d(P - xi)^2 |psi> with periodic distances."""
    L = grid.length_x
    prob_x = np.abs(states) ** 2
    dxs = min_image(grid.x[None, :] - points[:, :1], L)
    cx = np.sum(prob_x * dxs * dxs, axis=1)
    ph = np.fft.fft(states, axis=1)
    prob_p = np.abs(ph) ** 2 / states.shape[1]
    pv = momentum_values(grid, hbar)
    dps = min_image(pv[None, :] - points[:, 1:], 2 * grid.v_max)
    cp = np.sum(prob_p * dps * dps, axis=1)
    return cx + cp


def semiclassical_cost(f, coupling, check=True, tol=1e-6, chunk=4096):
    """Semiclassical transport cost sum_i w_i <psi_i| c_hbar(z_i) |psi_i>.

    Raises
    ------
    MarginalMismatch
        If ``check`` and the first marginal differs from f by more than ``tol`` in L1.
    """
    if check and f is not None:
        err = histogram_l1(coupling.points, coupling.weights, f)
        if err > tol:
            raise MarginalMismatch(f"first marginal differs from f by {err:.3e} in L1")
    total = 0.0
    for s in range(0, len(coupling.weights), chunk):
        sl = slice(s, s + chunk)
        total += float(coupling.weights[sl] @ _cost_terms(coupling.points[sl], coupling.states[sl],
                                                         coupling.grid, coupling.hbar))
    return total


def cost_operator_min_eigenvalue(grid, hbar, z):
    """Smallest eigenvalue of the discrete cost operator c_hbar(z)."""
    L = grid.length_x
    n = grid.n_x
    dx2 = min_image(grid.x - z[0], L) ** 2
    pv = momentum_values(grid, hbar)
    dp2 = min_image(pv - z[1], 2 * grid.v_max) ** 2
    F = np.fft.fft(np.eye(n), axis=0) / math.sqrt(n)
    A = np.diag(dx2) + F.conj().T @ (dp2[:, None] * F)
    return float(np.linalg.eigvalsh(0.5 * (A + A.conj().T))[0])


def toplitz_coupling(coupling, grid, hbar):
    """Operator coupling whose atoms carry coherent states at the second points.

    If the second marginal of ``coupling`` is g sampled on grid cells, the
    operator marginal is Wick(g).
    """
    states = coherent_states(grid, hbar, coupling.z2)
    return OperatorCoupling(coupling.z1, states, coupling.w * 1.0, grid, hbar)


def diagonal_toplitz_coupling(f, hbar):
    """Toplitz coupling of f with Wick(f): gamma(z) = f(z) |psi_z><psi_z| / h."""
    vals = f.values.ravel() * f.grid.cell
    keep = vals > 0
    pts = phase_points(f.grid)[keep]
    return OperatorCoupling(pts, coherent_states(f.grid, hbar, pts), vals[keep], f.grid, hbar)


@dataclass
class WhBracket:
    lower: float
    upper: float
    w2_lower: float
    w2_upper: float
    gradient_term: float
    toplitz_upper: float | None = None

    def consistent(self, slack=1e-10):
        """lower <= upper up to a relative rounding slack.

        At the d*hbar floor both sides are the same number computed two
        ways and may cross by a few ulps.
        """
        return self.lower <= self.upper + slack * max(1.0, abs(self.upper))


def wh_bracket(f, op, coupling=None):
    """Certified bracket lower <= W_hbar(f, op)^2 <= upper.

    lower = max(d hbar m, W2(f, H)^2 - d hbar m) and
    upper = (W2(f, H) + sqrt(d hbar m) + hbar ||grad sqrt(op)||_2)^2 with H the
    Husimi function and m the mass.  A classical coupling between f and g
    with op = Wick(g) tightens the upper bound through its Toplitz lift.
    """
    d = op.grid.dim
    hb = op.hbar
    mass = f.mass
    H = husimi_transform(op)
    w_lo, w_hi, _ = grid_w2_bracket(f, H)
    root = operator_sqrt(op)
    gx = schatten_norm(quantum_gradient(root, "x"), 2)
    gxi = schatten_norm(quantum_gradient(root, "xi"), 2)
    grad_term = hb * math.sqrt(gx * gx + gxi * gxi)
    lower = max(d * hb * mass, w_lo ** 2 - d * hb * mass)
    upper = (w_hi + math.sqrt(d * hb * mass) + grad_term) ** 2
    top = None
    if coupling is not None:
        oc = toplitz_coupling(coupling, op.grid, hb)
        _, e2 = oc.marginal_errors(op=op)
        if e2 > 1e-6:
            raise MarginalMismatch(f"Toplitz lift misses the operator by {e2:.3e} in trace norm")
        top = semiclassical_cost(f, oc)
        upper = min(upper, top)
    return WhBracket(lower, upper, w_lo, w_hi, grad_term, top)
