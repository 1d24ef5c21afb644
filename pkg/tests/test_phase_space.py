import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from kslab.errors import GridMismatch, KslabError, NegativeDensity, UnsupportedSpec
from kslab.norms import NormSpec, lambda_l1, lambda_l2, lorentz_values, norm
from kslab.phase_space import (InteractionKernel, KineticDensity, PhaseGrid, force_field,
                               min_image, spatial_density)

from conftest import product_gaussian


# grid and density invariants ----------------------------------------------------------

@pytest.mark.parametrize("n", [6, 12, 4, 100])
def test_grid_rejects_non_power_of_two(n):
    with pytest.raises(ValueError):
        PhaseGrid(n, 64, 16.0, 8.0)


def test_grid_spacings_and_hbar_pairing():
    g = PhaseGrid.for_hbar(128, 16.0, 0.2)
    assert g.dx == pytest.approx(0.125, abs=0)
    assert g.dv == pytest.approx(2 * g.v_max / 128, rel=1e-15)
    assert g.v_max == pytest.approx(math.pi * 0.2 * 128 / 16, rel=1e-15)


def test_density_negative_values():
    g = PhaseGrid(8, 8, 1.0, 1.0)
    vals = np.ones(g.shape)
    vals[0, 0] = -1e-13
    f = KineticDensity(g, vals)
    assert f.values.min() == 0.0
    vals[0, 0] = -1e-9
    with pytest.raises(NegativeDensity):
        KineticDensity(g, vals)


def test_density_declared_mass_checked():
    g = PhaseGrid(8, 8, 1.0, 1.0)
    vals = np.ones(g.shape)
    KineticDensity(g, vals, mass=float(vals.sum() * g.cell))
    with pytest.raises(KslabError):
        KineticDensity(g, vals, mass=1.5 * vals.sum() * g.cell)


# spatial density ---------------------------------------------------------------------

def test_spatial_density_of_product_gaussian():
    g = PhaseGrid(128, 128, 16.0, 8.0)
    rho = spatial_density(product_gaussian(g))
    exact = np.exp(-0.5 * g.x ** 2) / math.sqrt(2 * math.pi)
    assert np.abs(rho - exact).max() < 1e-8


def test_spatial_density_zero_and_separable(grid64):
    g = grid64
    assert np.all(spatial_density(KineticDensity(g, np.zeros(g.shape))) == 0)
    rng = np.random.default_rng(1)
    gx = rng.random(g.n_x)
    h = rng.random(g.n_v)
    h /= h.sum() * g.dv
    rho = spatial_density(KineticDensity(g, np.outer(gx, h)))
    assert np.allclose(rho, gx, rtol=1e-14, atol=0)


@given(arrays(np.float64, (16, 16), elements=st.floats(0, 10)))
def test_spatial_density_preserves_mass(vals):
    g = PhaseGrid(16, 16, 3.0, 2.0)
    f = KineticDensity(g, vals)
    m = np.sum(spatial_density(f)) * g.dx
    assert m == pytest.approx(f.mass, rel=1e-12, abs=1e-300)


# force field -------------------------------------------------------------------------

def _direct_force(rho, g, eps):
    """O(n^2) real-space convolution with the analytic gradient, seam offset dropped."""
    n = g.n_x
    r = rho - rho.mean()
    E = np.zeros(n)
    for i in range(n):
        d = g.x[i] - g.x
        off = min_image(d, g.length_x)
        dK = -off / (off * off + eps * eps) ** 1.5
        dK[np.isclose(np.abs(off), g.length_x / 2)] = 0.0
        E[i] = -np.sum(dK * r) * g.dx
    return E


def test_force_matches_direct_convolution():
    g = PhaseGrid(256, 16, 16.0, 1.0)
    eps = 0.1
    K = InteractionKernel.regularized_coulomb(g, eps)
    rho = np.exp(-0.5 * (g.x / 0.3) ** 2)
    E = force_field(rho, K)[0]
    assert np.abs(E - _direct_force(rho, g, eps)).max() < 1e-10


def test_force_uniform_and_parity(grid64):
    g = grid64
    K = InteractionKernel.regularized_coulomb(g, 0.5)
    assert np.abs(force_field(np.full(g.n_x, 3.0), K)).max() < 1e-14
    rho = np.exp(-g.x ** 2)
    E = force_field(rho, K)[0]
    i0 = g.n_x // 2  # x = 0
    assert abs(E[i0]) < 1e-12
    # x_j -> -x_j maps index j to n - j
    assert np.allclose(E[1:], -E[1:][::-1], atol=1e-12)


def test_force_grid_mismatch(grid64):
    K = InteractionKernel.regularized_coulomb(grid64, 0.5)
    with pytest.raises(GridMismatch):
        force_field(np.ones(32), K)
    with pytest.raises(GridMismatch):
        force_field(np.ones(64), K, PhaseGrid(64, 64, 8.0, 8.0))


@given(st.integers(0, 2 ** 32 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_force_is_linear(seed, a, b):
    g = PhaseGrid(32, 8, 8.0, 1.0)
    K = InteractionKernel.gaussian(g, 0.7)
    rng = np.random.default_rng(seed)
    r1, r2 = rng.random(32), rng.random(32)
    lhs = force_field(a * r1 + b * r2, K)
    rhs = a * force_field(r1, K) + b * force_field(r2, K)
    assert np.abs(lhs - rhs).max() <= 1e-12 * max(1.0, np.abs(rhs).max())


@given(st.integers(0, 2 ** 32 - 1), st.sampled_from([8, 16, 32, 64]))
def test_spectral_equals_direct_convolution(seed, n):
    g = PhaseGrid(n, 8, 8.0, 1.0)
    eps = max(0.5, g.dx)
    K = InteractionKernel.regularized_coulomb(g, eps)
    rho = np.random.default_rng(seed).random(n)
    assert np.abs(force_field(rho, K)[0] - _direct_force(rho, g, eps)).max() < 1e-10


def test_kernel_construction_checks(grid64):
    with pytest.raises(ValueError):
        InteractionKernel.regularized_coulomb(grid64, 0.1)
    bad = np.ones((1, 64))
    with pytest.raises(KslabError):
        InteractionKernel.custom(grid64, np.zeros(64), grad_samples=bad)


# norms -------------------------------------------------------------------------------

def _layer_cake(vals, p, cell):
    """p * int_0^inf mu(|f| > s)^(1/p) ds for a step function."""
    a = np.sort(np.abs(vals.ravel()))
    levels = np.concatenate(([0.0], np.unique(a)))
    total = 0.0
    for lo, hi in zip(levels[:-1], levels[1:]):
        total += (hi - lo) * (np.sum(a > lo) * cell) ** (1.0 / p)
    return p * total


def test_lorentz_indicator_closed_form():
    g = PhaseGrid(64, 8, 16.0, 1.0)
    ind = np.zeros(64)
    ind[10:27] = 1.0
    m = 17 * g.dx
    val = norm(ind, NormSpec.lorentz(3, 1), g)
    assert abs(val - 3 * m ** (1 / 3)) < 1e-10
    assert abs(val - _layer_cake(ind, 3, g.dx)) < 1e-10


@given(arrays(np.float64, 40, elements=st.floats(0, 5)), st.floats(1.0, 6.0))
def test_lorentz_p1_matches_layer_cake(vals, p):
    assert lorentz_values(vals, p, 1, 0.3) == pytest.approx(_layer_cake(vals, p, 0.3), rel=1e-10,
                                                            abs=1e-12)


@given(arrays(np.float64, (16, 16), elements=st.floats(0, 5)))
def test_lebesgue_equals_diagonal_lorentz(vals):
    g = PhaseGrid(16, 16, 2.0, 1.0)
    f = KineticDensity(g, vals)
    a = norm(f, NormSpec.lebesgue(2))
    b = norm(f, NormSpec.lorentz(2, 2))
    assert a == pytest.approx(b, rel=1e-12, abs=1e-300)


@given(arrays(np.float64, (16, 16), elements=st.floats(0, 5)), st.floats(1.0, 8.0))
def test_lorentz_nesting(vals, p):
    g = PhaseGrid(16, 16, 2.0, 1.0)
    f = KineticDensity(g, vals)
    assert norm(f, NormSpec.lorentz(p, 1)) >= norm(f, NormSpec.lorentz(p, math.inf)) * (1 - 1e-12)


def test_sobolev_degenerates_to_lebesgue(grid64):
    f = product_gaussian(grid64)
    a = norm(f, NormSpec.weighted_sobolev(0, 2, 0))
    assert a == pytest.approx(norm(f, NormSpec.lebesgue(2)), rel=1e-12)


def test_norm_spec_validation():
    with pytest.raises(UnsupportedSpec):
        NormSpec.lorentz(2, 0.5)
    with pytest.raises(UnsupportedSpec):
        NormSpec.weighted_sobolev(1.5, 2, 0)
    with pytest.raises(UnsupportedSpec):
        NormSpec("besov")


# stability functionals -----------------------------------------------------------------

def _maxwellian_x_uniform(g):
    X, V = np.broadcast_arrays(*g.mesh())
    return KineticDensity(g, np.exp(-0.5 * V ** 2) / math.sqrt(2 * math.pi) / g.length_x)


def test_lambda_l1_zero_and_maxwellian_closed_form():
    g = PhaseGrid(32, 256, 16.0, 8.0)
    assert lambda_l1(KineticDensity(g, np.zeros(g.shape))) == 0.0
    # int |d/dxi M| dxi = 2 M(0): constant c on a set of measure L has L^{3,1} norm 3 c L^(1/3)
    c = 2 / math.sqrt(2 * math.pi) / g.length_x
    exact = 3 * c * g.length_x ** (1 / 3)
    # |d/dxi M| has a kink at xi = 0, so the cell sum converges at second order
    vals = [lambda_l1(_maxwellian_x_uniform(PhaseGrid(32, n, 16.0, 8.0))) for n in (256, 512)]
    errs = [abs(v - exact) for v in vals]
    assert errs[0] < 2e-4
    assert 3.5 < errs[0] / errs[1] < 4.5
    assert abs((4 * vals[1] - vals[0]) / 3 - exact) < 1e-6


def test_lambda_l1_translation_invariant(grid64):
    f = product_gaussian(grid64, 0.8, 1.2)
    shifted = KineticDensity(grid64, np.roll(f.values, 11, axis=0))
    assert lambda_l1(shifted) == pytest.approx(lambda_l1(f), rel=1e-13)


def test_lambda_l2_properties(grid64):
    g = grid64
    assert lambda_l2(KineticDensity(g, np.zeros(g.shape)), 1.0) == 0.0
    f = product_gaussian(g)
    c = float(f.values.max()) * 10
    _, t1, _ = lambda_l2(f, c, return_terms=True)
    _, t1a, _ = lambda_l2(KineticDensity(g, 3.0 * f.values), c * 3, return_terms=True)
    assert t1a == pytest.approx(3.0 * t1, rel=1e-10)
    with pytest.raises(NegativeDensity):
        lambda_l2((np.full(g.shape, -1e-9), g), 1.0)
    with pytest.raises(ValueError):
        lambda_l2(f, 0.5 * float(f.values.max()))


def test_lambda_l2_grid_convergence():
    # second order in dv (kink of |grad sqrt f| at xi = 0)
    vals = []
    for n in (512, 1024):
        g = PhaseGrid(16, n, 16.0, 8.0)
        f = _maxwellian_x_uniform(g)
        vals.append(lambda_l2(f, float(f.values.max())))
    assert abs(vals[0] - vals[1]) < 1e-4
