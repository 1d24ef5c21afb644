"""Paired simulations, stability envelopes and convergence-rate fits.

Verdicts are pure functions of recorded series: every check first records
(times, metric, functional) and then builds its envelope with the helpers
``exponential_envelope`` and ``double_exponential_envelope``, so a verdict
can be recomputed from a CSV without re-simulating.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import partial

import numpy as np
from scipy import stats

from .errors import DegenerateSweep, InsufficientSweep
from .hartree import HartreeState, b_term, hartree_step, propagate_states
from .norms import INF, kernel_gradient_norms, lambda_l1, lambda_l2, lorentz_values, lp_sum
from .phase_space import PhaseGrid, min_image, spatial_density
from .quantum import (coherent_states, diag_operator, fourier_trace_grid,
                      husimi_transform, nyquist_mask, operator_sqrt, phase_fourier, quantum_gradient,
                      schatten_norm, weyl_quantize, wick_quantize)
from .transport import (OperatorCoupling, grid_w2_bracket, phase_points,
                        semiclassical_cost, wh_bracket)
from .vlasov import FieldHistory, VlasovState, characteristics, vlasov_step, _step_plan

log = logging.getLogger(__name__)

SLACK = 0.1


# records --------------------------------------------------------------------------

@dataclass
class StabilityEnvelope:
    """Metric series with its theoretical bound.

    ``lam`` holds the integrand (lambda or C), ``Lam`` its time integral
    (times the declared constant where applicable) and ``theta`` the sign
    used by double-exponential envelopes.
    """

    name: str
    times: np.ndarray
    metric: np.ndarray
    bound: np.ndarray
    lam: np.ndarray
    Lam: np.ndarray
    theta: np.ndarray | None = None
    slack: float = SLACK
    constant: float = float("nan")
    log_bound: np.ndarray | None = None
    extras: dict = field(default_factory=dict)

    def pointwise(self):
        if self.log_bound is not None:
            with np.errstate(divide="ignore"):
                lm = np.log(self.metric)
            return lm <= self.log_bound + math.log1p(self.slack)
        return self.metric <= self.bound * (1 + self.slack)

    @property
    def calibrated(self):
        if self.log_bound is not None:
            return bool(self.metric[0] <= math.exp(self.log_bound[0]) * (1 + 1e-10) + 1e-300)
        return bool(self.bound[0] >= self.metric[0] * (1 - 1e-10))

    @property
    def verdict(self):
        return bool(self.calibrated and np.all(self.pointwise()))

    def rows(self):
        ok = self.pointwise()
        return [(float(t), float(m), float(b), float(l), "PASS" if v else "FAIL")
                for t, m, b, l, v in zip(self.times, self.metric, self.bound, self.lam, ok)]

    def summary_line(self):
        return f"{'PASS' if self.verdict else 'FAIL'}, {self.constant!r}, {self.slack!r}"


@dataclass
class RateFit:
    hbars: np.ndarray
    values: np.ndarray
    slope: float
    halfwidth: float
    intercept: float

    def within(self, lo, hi):
        return lo <= self.slope <= hi


def fit_rate(hbars, values, confidence=0.95):
    """Least-squares slope of log(value) against log(hbar).

    Raises
    ------
    InsufficientSweep
        Fewer than 4 points or a span below a factor 8.
    DegenerateSweep
        Nonpositive or non-finite values, or repeated hbar.
    """
    h = np.asarray(hbars, dtype=float)
    v = np.asarray(values, dtype=float)
    if h.size != v.size:
        raise DegenerateSweep("hbar and value arrays differ in length")
    if h.size < 4:
        raise InsufficientSweep(f"need at least 4 hbar values, got {h.size}")
    if not (np.all(np.isfinite(v)) and np.all(v > 0) and np.all(h > 0)):
        raise DegenerateSweep("values and hbar must be positive and finite")
    if h.max() / h.min() < 8 * (1 - 1e-12):
        raise InsufficientSweep("hbar values must span a factor >= 8")
    x, y = np.log(h), np.log(v)
    if np.ptp(x) == 0:
        raise DegenerateSweep("all hbar values coincide")
    res = stats.linregress(x, y)
    t = stats.t.ppf(0.5 + confidence / 2, h.size - 2)
    return RateFit(h, v, float(res.slope), float(t * res.stderr), float(res.intercept))


def cumulative_integral(times, values):
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    out = np.zeros_like(t)
    out[1:] = np.cumsum(0.5 * (v[1:] + v[:-1]) * np.diff(t))
    return out


def exponential_envelope(name, times, metric, lam, constant, slack=SLACK, m0=None):
    """b(t) = m0 exp(constant * int_0^t lam)."""
    metric = np.asarray(metric, dtype=float)
    Lam = constant * cumulative_integral(times, lam)
    m0 = metric[0] if m0 is None else m0
    with np.errstate(over="ignore"):
        bound = m0 * np.exp(Lam)
    return StabilityEnvelope(name, np.asarray(times, float), metric, bound,
                             np.asarray(lam, float), Lam, slack=slack, constant=constant)


def minimal_exponential_constant(times, metric, lam):
    """Smallest C with metric(t) <= metric(0) exp(C int lam) on the series."""
    L = cumulative_integral(times, lam)
    m = np.asarray(metric, dtype=float)
    if m[0] <= 0:
        return 0.0 if np.all(m <= 0) else math.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(L > 0, np.log(np.maximum(m, 1e-300) / m[0]) / np.where(L > 0, L, 1), 0.0)
    return float(max(0.0, r.max()))


def double_exponential_envelope(name, times, metric, C, slack=SLACK, constant=float("nan")):
    """b(t) = m0^(exp(theta lambda)) exp(exp(lambda)), lambda = int C, theta = sign ln m(t).

    Stored in log form to avoid overflow.
    """
    metric = np.asarray(metric, dtype=float)
    lam = cumulative_integral(times, C)
    with np.errstate(divide="ignore"):
        theta = np.sign(np.log(metric))
    lm0 = math.log(metric[0])
    logb = np.exp(theta * lam) * lm0 + np.exp(lam)
    with np.errstate(over="ignore"):
        bound = np.exp(logb)
    return StabilityEnvelope(name, np.asarray(times, float), metric, bound, np.asarray(C, float),
                             lam, theta=theta, slack=slack, constant=constant, log_bound=logb)


# classical weak-strong checks -----------------------------------------------------

def l1_constant(kernel, p=1.5):
    """p' ||grad K||_{L^{p,inf}}: Young (weak type, constant p') times Lorentz Hoelder (constant 1)."""
    weak, _ = kernel_gradient_norms(kernel, p)
    return p / (p - 1) * weak


def l2_constant(kernel, p=1.5):
    """2 p' max(||grad K||_{L^{p,inf}}, ||grad K||_{L^p})."""
    weak, strong = kernel_gradient_norms(kernel, p)
    return 2 * p / (p - 1) * max(weak, strong)


def probe_l1_constant(kernel, n_probes=16, seed=0, p=1.5):
    """sup over probe densities g of ||E[g]||_{L^{p,inf}} / ||g||_{L^1}.

    Probes are narrow Gaussians (approximate point masses) and single
    Fourier modes; the result never exceeds :func:`l1_constant`.
    """
    g = kernel.grid
    rng = np.random.default_rng(seed)
    x = g.x
    best = 0.0
    for i in range(n_probes):
        if i % 2 == 0:
            c = rng.uniform(-g.length_x / 2, g.length_x / 2)
            w = max(g.dx, rng.uniform(1, 4) * g.dx)
            r = np.exp(-0.5 * (((x - c + g.length_x / 2) % g.length_x - g.length_x / 2) / w) ** 2)
        else:
            k = rng.integers(1, g.n_x // 4)
            r = 1.0 + np.cos(2 * np.pi * k * x / g.length_x)
        r = r.reshape(g.spatial_shape)
        E = np.sqrt(np.sum(kernel.force(r) ** 2, axis=0))
        ratio = lorentz_values(E, p, INF, g.cell_x) / lp_sum(r - r.mean(), 1, g.cell_x)
        best = max(best, float(ratio))
    return best


def _paired_vlasov(f1, f2, kernel, T, dt, record):
    s1 = VlasovState.start(f1, kernel, dt)
    s2 = VlasovState.start(f2, kernel, dt)
    out = [record(s1.f, s2.f)]
    times = [s1.t]
    for h in _step_plan(0.0, T, dt):
        s1 = vlasov_step(s1, h, diagnose=False)
        s2 = vlasov_step(s2, h, diagnose=False)
        out.append(record(s1.f, s2.f))
        times.append(s1.t)
    return np.array(times), out


def check_l1_stability(f1, f2, kernel, T, C_empirical=None, dt=0.02, slack=SLACK,
                       exponents=(3.0, 1.0), seed=0):
    """L1 weak-strong envelope ||f1 - f2||_1 <= ||f1^0 - f2^0||_1 exp(C int lambda_{f2}).

    f2 is the strong solution.  ``C_empirical`` defaults to :func:`l1_constant`.
    """
    C = l1_constant(kernel) if C_empirical is None else float(C_empirical)
    cell = f1.grid.cell

    def record(a, b):
        return (float(np.abs(a.values - b.values).sum() * cell), lambda_l1(b, exponents))

    t, rec = _paired_vlasov(f1, f2, kernel, T, dt, record)
    m = np.array([r[0] for r in rec])
    lam = np.array([r[1] for r in rec])
    env = exponential_envelope("l1_stability", t, m, lam, C, slack)
    env.extras.update(C_probe=probe_l1_constant(kernel, seed=seed),
                      C_min=minimal_exponential_constant(t, m, lam),
                      amplification=float(m[-1] / m[0]) if m[0] > 0 else 0.0)
    return env


def check_l2_stability(f1, f2, kernel, T, C=None, dt=0.02, slack=SLACK,
                       exponents=(3.0, 1.0), mid_exponent=3.0):
    """Square-root weak-strong envelope and its L1 -> L2 corollary.

    Returns
    -------
    main, corollary : StabilityEnvelope
        main: ||sqrt f1 - sqrt f2||_2 against its exponential bound;
        corollary: ||f1 - f2||_2 <= 2 C_inf^(1/2) ||f1^0 - f2^0||_1^(1/2) exp(Lambda).
    """
    Cd = l2_constant(kernel) if C is None else float(C)
    cell = f1.grid.cell

    def record(a, b):
        r1, r2 = np.sqrt(a.values), np.sqrt(b.values)
        sup = max(float(a.values.max()), float(b.values.max()))
        _, t1, t2 = lambda_l2(b, max(sup, float(b.values.max())), exponents, mid_exponent,
                              return_terms=True)
        t2_unit = t2 / math.sqrt(max(sup, float(b.values.max()))) if sup > 0 else 0.0
        return (float(np.sqrt(np.sum((r1 - r2) ** 2) * cell)),
                float(np.sqrt(np.sum((a.values - b.values) ** 2) * cell)),
                sup, t1, t2_unit,
                float(np.abs(a.values - b.values).sum() * cell))

    t, rec = _paired_vlasov(f1, f2, kernel, T, dt, record)
    arr = np.array(rec)
    m_root, m_l2, sups, t1, t2u, l1 = arr.T
    c_inf = float(sups.max())
    lam = t1 + math.sqrt(c_inf) * t2u
    main = exponential_envelope("l2_stability", t, m_root, lam, Cd, slack)
    main.extras.update(C_inf=c_inf, C_min=minimal_exponential_constant(t, m_root, lam))
    m0c = 2 * math.sqrt(c_inf) * math.sqrt(l1[0])
    cor = exponential_envelope("l2_corollary", t, m_l2, lam, Cd, slack, m0=m0c)
    cor.extras.update(C_inf=c_inf,
                      ordering=bool(np.all(m_l2 <= 2 * math.sqrt(c_inf) * m_root * (1 + 1e-12)
                                           + 1e-300)))
    return main, cor


# quantum checks -------------------------------------------------------------------

def sweep_grid(hbar, length=16.0, n_base=64, hbar_base=0.4):
    """Phase grid paired with hbar whose size scales like 1/hbar (v_max fixed)."""
    n = int(round(n_base * hbar_base / hbar))
    if n & (n - 1):
        raise ValueError(f"hbar={hbar} gives n={n}, not a power of two")
    return PhaseGrid.for_hbar(n, length, hbar)


@dataclass
class CommutatorResult:
    fit: RateFit
    lhs: np.ndarray          # (n_hbar, n_probe)
    rhs: np.ndarray          # (n_hbar,) hbar * (L^{3-e} + L^{3+e}) norms of diag |grad_xi op|
    ratios: np.ndarray       # sup lhs / rhs per hbar
    ratio_slope: float
    constant: float


def abs_operator_diag(op):
    """diag(|A|) for a Hermitian A: h |A|_jj / dx."""
    M = op.matrix
    lam, U = np.linalg.eigh(0.5 * (M + M.conj().T))
    absd = np.einsum("ij,j,ij->i", U, np.abs(lam), U.conj()).real
    return op.h * absd / op.grid.dx


def commutator_norms(op, kernel, probes):
    """||[K(. - x), op]||_{L^1} for probe points x on the grid."""
    g = op.grid
    n = g.n_x
    a = np.arange(n)
    out = []
    for x in probes:
        p = int(round((x - g.x[0]) / g.dx)) % n
        Kx = kernel.samples[(a - p) % n]
        C = (Kx[:, None] - Kx[None, :]) * op.matrix
        out.append(schatten_norm(op.like(C, kind="general"), 1))
    return np.array(out)


def commutator_point(hb, make_f, make_kernel, n_probes=8, eps=1.0, length=16.0, n_base=64,
                     hbar_base=0.4, probes=None):
    """Commutator norms at the probe points and the diagonal-gradient RHS for one hbar."""
    g = sweep_grid(hb, length, n_base, hbar_base)
    f = make_f(g)
    K = make_kernel(g)
    op = weyl_quantize(f, hb, validate=False)
    pts = probes if probes is not None else np.linspace(-length / 4, length / 4, n_probes)
    lhs = commutator_norms(op, K, pts)
    d = abs_operator_diag(quantum_gradient(op, "xi"))
    rhs = hb * (lp_sum(d, 3 - eps, g.dx) + lp_sum(d, 3 + eps, g.dx))
    return lhs, float(rhs)


def check_commutator_inequality(make_f, make_kernel, hbars=(0.4, 0.2, 0.1, 0.05), n_probes=8,
                                eps=1.0, length=16.0, n_base=64, hbar_base=0.4, probes=None,
                                mapper=map):
    """Fit the hbar-exponent of sup_x ||[K(. - x), Weyl f]||_{L^1} and compare it
    with hbar (||diag|grad_xi op|||_{L^{3-eps}} + ||...||_{L^{3+eps}}).

    ``mapper`` evaluates the sweep points (e.g. ``Executor.map``).
    """
    work = partial(commutator_point, make_f=make_f, make_kernel=make_kernel, n_probes=n_probes,
                   eps=eps, length=length, n_base=n_base, hbar_base=hbar_base, probes=probes)
    res = list(mapper(work, hbars))
    lhs = np.array([r[0] for r in res])
    rhs = np.array([r[1] for r in res])
    sup = lhs.max(axis=1)
    fit = fit_rate(hbars, sup)
    ratios = sup / rhs
    rslope = float(np.polyfit(np.log(hbars), np.log(ratios), 1)[0])
    return CommutatorResult(fit, lhs, rhs, ratios, rslope, float(ratios.max()))


def b_term_sweep(make_f, make_kernel, hbars=(0.4, 0.2, 0.1, 0.05), length=16.0, n_base=64,
                 hbar_base=0.4):
    """RateFit of ||B||_{L^1} across the sweep."""
    vals = []
    for hb in hbars:
        g = sweep_grid(hb, length, n_base, hbar_base)
        vals.append(b_term(make_f(g), hb, make_kernel(g))[1])
    return fit_rate(hbars, vals)


def sqrt_gradient_exponent(make_op, hbars=(0.4, 0.2, 0.1, 0.05), length=16.0, n_base=64,
                           hbar_base=0.4):
    """Fit theta in hbar ||grad sqrt(op)||_{L^2} ~ hbar^theta for a family of states.

    ``make_op(grid, hbar)`` builds the state.  Wick states of a fixed smooth
    density give theta near 1; a pure coherent state (projector / h) gives
    theta = 1/2.
    """
    vals = []
    for hb in hbars:
        g = sweep_grid(hb, length, n_base, hbar_base)
        root = operator_sqrt(make_op(g, hb))
        gx = schatten_norm(quantum_gradient(root, "x"), 2)
        gxi = schatten_norm(quantum_gradient(root, "xi"), 2)
        vals.append(hb * math.hypot(gx, gxi))
    return fit_rate(hbars, vals)


@dataclass
class RateStudy:
    trace: RateFit
    hs: RateFit
    records: dict
    fourier_ok: bool
    initial_trace: np.ndarray
    initial_hs: np.ndarray


def _wick_op(f, hb):
    return wick_quantize(f, hb)


def rate_point(hb, make_f, make_kernel, T=1.0, dt=0.005, length=16.0, n_base=64, hbar_base=0.4,
               record_every=20, make_op=_wick_op):
    """Paired Vlasov / Hartree run for one hbar.

    Returns a record dict with lists ``t``, ``trace``, ``hs``, ``fourier`` and
    the flag ``fourier_ok``.
    """
    g = sweep_grid(hb, length, n_base, hbar_base)
    f0 = make_f(g)
    K = make_kernel(g)
    vs = VlasovState.start(f0, K, dt)
    qs = HartreeState.start(make_op(f0, hb), K, dt)
    mask = nyquist_mask(g.n_x)
    rec = {"t": [], "trace": [], "hs": [], "fourier": [], "fourier_ok": True, "n_x": g.n_x}

    def measure(vst, qst):
        W = weyl_quantize(vst.f, hb, validate=False)
        D = qst.op.like(qst.op.matrix - W.matrix, kind="general")
        tr = schatten_norm(D, 1)
        Fq = fourier_trace_grid(qst.op)
        Fc = phase_fourier(vst.f.values, g)
        four = float(np.abs(Fq - Fc)[mask].max())
        rec["t"].append(vst.t)
        rec["trace"].append(tr)
        rec["hs"].append(schatten_norm(D, 2))
        rec["fourier"].append(four)
        rec["fourier_ok"] &= bool(four <= tr * (1 + 1e-8))

    measure(vs, qs)
    plan = _step_plan(0.0, T, dt)
    for i, h in enumerate(plan):
        vs = vlasov_step(vs, h, diagnose=False)
        qs = hartree_step(qs, h, diagnose=False)
        if (i + 1) % record_every == 0 or i == len(plan) - 1:
            measure(vs, qs)
    return rec


def semiclassical_rate_study(make_f, make_kernel, hbars=(0.4, 0.2, 0.1, 0.05), T=1.0, dt=0.005,
                             length=16.0, n_base=64, hbar_base=0.4, record_every=20,
                             make_op=_wick_op, mapper=map):
    """Distance between Hartree and Weyl(Vlasov) at T, fitted in hbar.

    ``make_op(f, hbar)`` builds the initial operator (default: Wick of f).
    At every recorded time the Fourier corollary is checked on the dual grid
    away from the Nyquist row and column.

    Raises
    ------
    InsufficientSweep
    """
    if len(hbars) < 4:
        raise InsufficientSweep(f"need at least 4 hbar values, got {len(hbars)}")
    work = partial(rate_point, make_f=make_f, make_kernel=make_kernel, T=T, dt=dt, length=length,
                   n_base=n_base, hbar_base=hbar_base, record_every=record_every, make_op=make_op)
    recs = list(mapper(work, hbars))
    records = dict(zip(hbars, recs))
    return RateStudy(fit_rate(hbars, [r["trace"][-1] for r in recs]),
                     fit_rate(hbars, [r["hs"][-1] for r in recs]), records,
                     all(r["fourier_ok"] for r in recs),
                     np.array([r["trace"][0] for r in recs]), np.array([r["hs"][0] for r in recs]))


# W_hbar stability -----------------------------------------------------------------

@dataclass
class WhStability:
    envelope: StabilityEnvelope          # double exponential, metric sqrt(E2)
    differential: StabilityEnvelope      # difference quotient vs C E2 max(1, -ln E2)
    times: np.ndarray
    cost: np.ndarray
    comparison: list                     # (t, W2 upper^2, E2 + d hbar, ok)
    comparison_ok: bool
    fitted_c: float
    marginal_error: np.ndarray           # L1 gap between deposited and grid spatial densities
    bracket: object = None


def gronwall_rate(times, cost, S):
    """Smallest c with dE/dt <= c S E max(1, -ln E) on every recorded interval."""
    t = np.asarray(times, float)
    E = np.asarray(cost, float)
    dE = np.diff(E) / np.diff(t)
    Em = 0.5 * (E[1:] + E[:-1])
    Sm = 0.5 * (S[1:] + S[:-1])
    rhs = Sm * Em * np.maximum(1.0, -np.log(Em))
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(rhs > 0, dE / rhs, 0.0)
    return float(max(0.0, q.max())) if q.size else 0.0


def deposit_density(points, weights, grid):
    """Spatial density of weighted particles with linear (cloud-in-cell) deposition."""
    n = grid.n_x
    pos = (np.asarray(points)[:, 0] - grid.x[0]) / grid.dx
    j = np.floor(pos).astype(int)
    frac = pos - j
    rho = np.bincount(j % n, weights * (1 - frac), minlength=n)
    rho += np.bincount((j + 1) % n, weights * frac, minlength=n)
    return rho / grid.dx


def check_wh_stability(f0, kernel, T, hbar, dt=0.02, slack=SLACK, compare_every=10,
                       control=False, threshold=1e-12):
    """Evolve the diagonal Toplitz coupling of (f0, Wick f0) along paired
    Vlasov / Hartree runs and check the W_hbar stability envelope.

    Atoms move along the characteristics of the Vlasov field (linear in time
    between steps); coherent-state vectors follow the Hartree step unitaries,
    so the operator marginal stays exactly the Hartree solution.

    ``control=True`` uses lambda = 0 (meant for the zero kernel); the
    differential check is then skipped.
    """
    g = f0.grid
    d = g.dim
    vals = f0.values.ravel() * g.cell
    keep = vals > threshold * vals.max()
    z = phase_points(g)[keep]
    w = vals[keep]
    Psi = coherent_states(g, hbar, z)
    op0 = wick_quantize(f0, hbar)
    vs = VlasovState.start(f0, kernel, dt)
    qs = HartreeState.start(op0, kernel, dt)
    mass = f0.mass

    def coupling():
        return OperatorCoupling(z, Psi, w, g, hbar)

    times = [0.0]
    cost = [semiclassical_cost(None, coupling(), check=False)]
    rho_f = [float(spatial_density(vs.f).max())]
    rho_q = [float(diag_operator(qs.op).max())]
    def marginal_gap():
        return float(np.abs(deposit_density(z, w, g) - spatial_density(vs.f)).sum() * g.dx)

    marg = [marginal_gap()]
    comparison = []

    def compare(t):
        H = husimi_transform(qs.op)
        _, hi, _ = grid_w2_bracket(vs.f, H)
        rhs = cost[-1] + d * hbar * mass
        comparison.append((t, hi * hi, rhs, bool(hi * hi <= rhs)))

    compare(0.0)
    E_old = vs.kernel.force(spatial_density(vs.f))[0]
    plan = _step_plan(0.0, T, dt)
    for i, h in enumerate(plan):
        t0 = vs.t
        vs = vlasov_step(vs, h, diagnose=False)
        E_new = vs.kernel.force(spatial_density(vs.f))[0]
        hist = FieldHistory(g, [t0, t0 + h], [E_old, E_new])
        z = characteristics(hist, z, t0 + h, h, g, t0=t0, periodic_velocity=True).z
        qs, V1, V2 = hartree_step(qs, h, diagnose=False, return_potentials=True)
        Psi = propagate_states(Psi, g, hbar, h, V1, V2)
        E_old = E_new
        times.append(vs.t)
        cost.append(semiclassical_cost(None, coupling(), check=False))
        rho_f.append(float(spatial_density(vs.f).max()))
        rho_q.append(float(diag_operator(qs.op).max()))
        marg.append(marginal_gap())
        if (i + 1) % compare_every == 0 or i == len(plan) - 1:
            compare(vs.t)
    times = np.array(times)
    cost = np.array(cost)
    S = np.array(rho_f) + np.array(rho_q)
    c = 0.0 if control else gronwall_rate(times, cost, S)
    Cser = c * S
    env = double_exponential_envelope("wh_stability", times, np.sqrt(cost), Cser, slack, c)
    # differential inequality, interval by interval
    diff = None
    dE = np.diff(cost) / np.diff(times)
    Em = 0.5 * (cost[1:] + cost[:-1])
    rhs = 0.5 * (Cser[1:] + Cser[:-1]) * Em * np.maximum(1.0, -np.log(Em))
    tm = 0.5 * (times[1:] + times[:-1])
    if not control:
        diff = StabilityEnvelope("wh_differential", tm, dE, rhs, 0.5 * (Cser[1:] + Cser[:-1]),
                                 cumulative_integral(times, Cser)[1:], slack=slack, constant=c)
        # a decreasing cost has a nonpositive quotient; compare against max(rhs, 0)
        diff.bound = np.maximum(rhs, 0.0)
        diff.extras["note"] = "metric is dE2/dt on each interval"
    bracket = wh_bracket(vs.f, qs.op)
    return WhStability(env, diff, times, cost, comparison, all(c[3] for c in comparison), c,
                       np.array(marg), bracket)


# log-Lipschitz modulus ------------------------------------------------------------

@dataclass
class LogLipschitz:
    radii: np.ndarray
    omega: np.ndarray
    constant: float
    degenerate: bool


def log_lipschitz_modulus(field, grid, radii=None, n_pairs=64, seed=0):
    """omega(r) = max over probe pairs at distance r of |E(x1) - E(x2)| / r.

    ``field`` is a callable x -> E(x) or an array of grid samples (spline
    interpolated).  The fitted constant is max_r omega(r) / max(1, -ln r);
    a field whose modulus does not depend on r (Lipschitz, e.g. linear) is
    flagged degenerate.
    """
    if not callable(field):
        hist = FieldHistory(grid, [0.0, 1.0], [field, field])
        field_fn = lambda x: hist(0.0, min_image(x, grid.length_x))  # noqa: E731
    else:
        field_fn = field
    L = grid.length_x
    if radii is None:
        radii = np.geomspace(grid.dx, L / 4, 12)
    radii = np.asarray(radii, dtype=float)
    if radii.min() < grid.dx * (1 - 1e-12) or radii.max() > L / 4 * (1 + 1e-12):
        raise ValueError("probe radii must lie in [dx, L/4]")
    rng = np.random.default_rng(seed)
    x1 = rng.uniform(-L / 2, L / 2, n_pairs)
    om = []
    for r in radii:
        a = np.asarray(field_fn(x1))
        b = np.asarray(field_fn(x1 + r))
        om.append(float(np.max(np.abs(a - b)) / r))
    om = np.array(om)
    C = float(np.max(om / np.maximum(1.0, -np.log(radii))))
    degenerate = bool(np.ptp(om) <= 1e-6 * max(np.abs(om).max(), 1e-300))
    return LogLipschitz(radii, om, C, degenerate)
