import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kslab.errors import CouplingDegenerate, MarginalMismatch, MassMismatch, NonConvergence
from kslab.phase_space import KineticDensity, PhaseGrid
from kslab.quantum import DensityOperator, coherent_states, wick_quantize
from kslab.transport import (DiscreteCoupling, OperatorCoupling, cost_matrix,
                             cost_operator_min_eigenvalue, diagonal_toplitz_coupling,
                             exact_transport, grid_period, grid_w2_bracket, identity_coupling,
                             semiclassical_cost, sinkhorn, toplitz_coupling, translation_coupling,
                             wasserstein, wh_bracket)

HB = 0.2


def _mesh(grid):
    return np.broadcast_arrays(*grid.mesh())


def _gauss(grid, sx=0.5, sv=0.5, x0=0.0, v0=0.0):
    X, V = _mesh(grid)
    f = np.exp(-0.5 * ((X - x0) / sx) ** 2 - 0.5 * ((V - v0) / sv) ** 2)
    return KineticDensity(grid, f / (f.sum() * grid.cell))


def _cloud(seed, m=30, n=25):
    rng = np.random.default_rng(seed)
    P = rng.random((m, 2)) * 4
    Q = rng.random((n, 2)) * 4 + 0.5
    a, b = rng.random(m), rng.random(n)
    return (P, a / a.sum()), (Q, b / b.sum())


# exact transport ---------------------------------------------------------------------

@pytest.mark.parametrize("p", [1, 2, 3])
def test_two_diracs(p):
    w = wasserstein(([[0.0, 0.0]], [1.0]), ([[0.6, 0.8]], [1.0]), p=p)
    assert w.value == pytest.approx(1.0, abs=1e-15)


def _vertex_enumeration(a, b, C):
    """Minimum cost over all basic feasible solutions of the transport polytope."""
    m, n = C.shape
    cells = [(i, j) for i in range(m) for j in range(n)]
    A = np.zeros((m + n, m * n))
    for k, (i, j) in enumerate(cells):
        A[i, k] = 1
        A[m + j, k] = 1
    rhs = np.r_[a, b]
    best = np.inf
    for basis in itertools.combinations(range(m * n), m + n - 1):
        B = A[:, basis]
        if np.linalg.matrix_rank(B) < m + n - 1:
            continue
        x, *_ = np.linalg.lstsq(B, rhs, rcond=None)
        if np.abs(B @ x - rhs).max() > 1e-12 or x.min() < -1e-14:
            continue
        best = min(best, float(C.ravel()[list(basis)] @ x))
    return best


@pytest.mark.parametrize("seed", range(5))
def test_exact_lp_matches_vertex_enumeration(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random(4), rng.random(4)
    a /= a.sum()
    b /= b.sum()
    C = rng.random((4, 4)) * 3
    assert exact_transport(a, b, C).cost == pytest.approx(_vertex_enumeration(a, b, C), abs=1e-12)


@pytest.mark.parametrize("shift", [1, 3, 5])
def test_translate_distance(shift):
    g = PhaseGrid(32, 32, 16.0, 4.0)
    f = _gauss(g)
    moved = KineticDensity(g, np.roll(f.values, shift, axis=0))
    assert wasserstein(f, moved).value == pytest.approx(shift * g.dx, abs=1e-6)


def test_translate_on_torus_never_exceeds_shift():
    # with tails wrapping around the circle, shortcuts beat the rigid shift
    g = PhaseGrid(32, 32, 16.0, 4.0)
    f = _gauss(g, sx=1.0)
    for shift in (3, 7):
        w = wasserstein(f, KineticDensity(g, np.roll(f.values, shift, axis=0))).value
        assert w <= shift * g.dx + 1e-12


def test_triangle_inequality():
    rng = np.random.default_rng(7)
    for _ in range(10):
        pts = [rng.random((12, 2)) * 3 for _ in range(3)]
        ws = [rng.random(12) for _ in range(3)]
        ms = [(p, w / w.sum()) for p, w in zip(pts, ws)]
        d = lambda i, j: wasserstein(ms[i], ms[j]).value  # noqa: E731
        assert d(0, 2) <= d(0, 1) + d(1, 2) + 1e-10


def test_mass_mismatch_and_size_limit():
    with pytest.raises(MassMismatch):
        wasserstein(([[0.0, 0.0]], [1.0]), ([[1.0, 0.0]], [1.1]))
    with pytest.raises(MassMismatch):
        exact_transport(np.array([0.5, 0.5]), np.array([0.5, 0.6]), np.ones((2, 2)))
    big = (np.zeros((2001, 2)), np.full(2001, 1 / 2001))
    with pytest.raises(ValueError):
        wasserstein(big, big)


# entropic transport -------------------------------------------------------------------

@pytest.mark.parametrize("seed", range(4))
def test_sinkhorn_close_to_exact(seed):
    mu, nu = _cloud(seed)
    exact = wasserstein(mu, nu).value
    ent = wasserstein(mu, nu, method="entropic")
    assert abs(ent.value - exact) <= 0.01 * exact
    assert ent.lower <= exact + 1e-9 and exact <= ent.upper + 1e-9
    assert ent.eps > 0 and ent.gap >= 0


def test_debiased_sinkhorn_increases_as_eps_decreases():
    """Regression: the debiased value approaches W2 from below as eps shrinks."""
    for seed in range(3):
        mu, nu = _cloud(seed)
        vals = [wasserstein(mu, nu, method="entropic", eps=e).value for e in (0.3, 0.1, 0.03)]
        assert np.all(np.diff(vals) >= -1e-9)
        assert vals[-1] <= wasserstein(mu, nu).value + 1e-9


def test_sinkhorn_iteration_cap():
    (P, a), (Q, b) = _cloud(0)
    with pytest.raises(NonConvergence):
        sinkhorn(a, b, cost_matrix(P, Q), 1e-3, max_iter=5)


# grid bracket --------------------------------------------------------------------------

def test_grid_bracket_contains_exact():
    g = PhaseGrid(32, 32, 16.0, 4.0)
    f = _gauss(g)
    h = _gauss(g, sx=0.7, x0=1.0, v0=0.5)
    lo, hi, info = grid_w2_bracket(f, h, max_atoms=100)
    exact = wasserstein(f, h).value
    assert lo <= exact + 1e-12 <= hi + 2e-12
    lo2, hi2, _ = grid_w2_bracket(f, h)
    # the bracket keeps cells that the 1e-12 atom threshold drops
    assert lo2 == pytest.approx(exact, abs=1e-10) and hi2 == pytest.approx(exact, abs=1e-10)
    with pytest.raises(MassMismatch):
        grid_w2_bracket(f, KineticDensity(g, 1.1 * h.values))


# operator couplings ---------------------------------------------------------------------

@pytest.fixture(scope="module")
def qg():
    return PhaseGrid.for_hbar(64, 16.0, HB)


def test_cost_operator_spectrum_floor(qg):
    for z in ([0.0, 0.0], [1.3, -0.7], [qg.x[5], qg.v[-3]]):
        assert cost_operator_min_eigenvalue(qg, HB, z) >= HB - 1e-10


def test_diagonal_toplitz_coupling(qg):
    f = _gauss(qg, sx=0.7, sv=0.6)
    gam = diagonal_toplitz_coupling(f, HB)
    e1, e2 = gam.marginal_errors(f, wick_quantize(f, HB))
    assert e1 < 1e-6 and e2 < 1e-6
    assert semiclassical_cost(f, gam) == pytest.approx(HB * f.mass, rel=0.02)


def test_semiclassical_cost_lower_bound_on_random_couplings(qg):
    rng = np.random.default_rng(3)
    for _ in range(20):
        N = 40
        pts = np.column_stack([rng.uniform(-4, 4, N), rng.uniform(-2, 2, N)])
        S = rng.normal(size=(N, 64)) + 1j * rng.normal(size=(N, 64))
        S /= np.linalg.norm(S, axis=1, keepdims=True)
        w = rng.random(N)
        gam = OperatorCoupling(pts, S, w / w.sum(), qg, HB)
        assert semiclassical_cost(None, gam, check=False) >= HB - 1e-10


def test_semiclassical_cost_translation_invariant(qg):
    f = _gauss(qg, sx=0.7)
    gam = diagonal_toplitz_coupling(f, HB)
    k = 5
    moved = OperatorCoupling(gam.points + [k * qg.dx, 0.0], np.roll(gam.states, k, axis=1),
                             gam.weights, qg, HB)
    fm = KineticDensity(qg, np.roll(f.values, k, axis=0))
    assert semiclassical_cost(fm, moved) == pytest.approx(semiclassical_cost(f, gam), abs=1e-10)


def test_coupling_checks(qg):
    f = _gauss(qg)
    gam = diagonal_toplitz_coupling(f, HB)
    with pytest.raises(MarginalMismatch):
        semiclassical_cost(_gauss(qg, x0=2.0), gam)
    with pytest.raises(CouplingDegenerate):
        OperatorCoupling(gam.points[:2], gam.states[:2], [0.5, -0.1], qg, HB)


def test_toplitz_lift_of_translation(qg):
    f = _gauss(qg, sx=0.7)
    for k in (4, 8):
        a = k * qg.dx
        g2 = KineticDensity(qg, np.roll(f.values, k, axis=0))
        gam = translation_coupling(f, k)
        lift = toplitz_coupling(gam, qg, HB)
        _, e2 = lift.marginal_errors(op=wick_quantize(g2, HB))
        assert e2 < 1e-6
        assert semiclassical_cost(f, lift) <= (gam.cost() + HB) * 1.02
        assert gam.cost() == pytest.approx(a * a, rel=1e-12)


def test_toplitz_lift_of_identity_is_diagonal(qg):
    f = _gauss(qg, sx=0.7)
    lift = toplitz_coupling(identity_coupling(f), qg, HB)
    assert semiclassical_cost(f, lift) <= HB * 1.02


# W_hbar bracket -------------------------------------------------------------------------

def test_bracket_for_own_wick_quantization(qg):
    f = _gauss(qg, sx=0.7)
    br = wh_bracket(f, wick_quantize(f, HB), coupling=identity_coupling(f))
    assert br.lower == pytest.approx(HB, abs=1e-12)
    assert br.upper <= HB * 1.02
    assert br.consistent()
    free = wh_bracket(f, wick_quantize(f, HB))
    assert free.lower <= HB + 1e-12 <= free.upper


@pytest.mark.parametrize("k", [6, 8])
def test_bracket_tracks_squared_shift(qg, k):
    f = _gauss(qg, sx=0.7)
    a = k * qg.dx
    g2 = KineticDensity(qg, np.roll(f.values, k, axis=0))
    br = wh_bracket(f, wick_quantize(g2, HB), coupling=translation_coupling(f, k))
    assert br.lower <= a * a + HB <= br.upper * (1 + 1e-10)
    assert 0.5 * (br.lower + br.upper) == pytest.approx(a * a, rel=0.10)


def test_bracket_consistency_on_random_pairs():
    hb = 1.0
    grid = PhaseGrid.for_hbar(16, 16.0, hb)
    rng = np.random.default_rng(0)
    for _ in range(100):
        f = rng.random(grid.shape) ** 4
        f = KineticDensity(grid, f / (f.sum() * grid.cell))
        A = rng.normal(size=(16, 3)) + 1j * rng.normal(size=(16, 3))
        M = A @ A.conj().T
        M /= 2 * math.pi * hb * np.trace(M).real
        br = wh_bracket(f, DensityOperator(M, grid, hb))
        assert br.lower >= hb - 1e-10
        assert br.consistent()


@settings(max_examples=10)
@given(st.integers(0, 2 ** 32 - 1))
def test_discrete_coupling_cost_is_nonnegative_and_weighted(seed):
    rng = np.random.default_rng(seed)
    g = PhaseGrid(16, 16, 8.0, 2.0)
    z1 = rng.uniform(-4, 4, (20, 2))
    z2 = rng.uniform(-4, 4, (20, 2))
    w = rng.random(20)
    gam = DiscreteCoupling(z1, z2, w / w.sum(), period=grid_period(g))
    c = gam.cost()
    assert 0 <= c <= (4 ** 2 + 2 ** 2)
    states = coherent_states(g, 1.0, np.zeros((1, 2)))
    assert states.shape == (1, 16)
