import math

import numpy as np
import pytest

from kslab.errors import BlowupDetected, HistoryGap
from kslab.hartree import (MOMENT_ORDERS, HartreeState, PotentialHistory, b_term, hartree_step,
                           solve_hartree, solve_linear_hartree, stationary_state, total_energy)
from kslab.phase_space import InteractionKernel, KineticDensity, PhaseGrid
from kslab.quantum import (DensityOperator, coherent_state, diag_operator, momentum_moment,
                           schatten_norm, wick_quantize, wigner_transform)

HB = 0.2


@pytest.fixture(scope="module")
def g():
    return PhaseGrid.for_hbar(128, 16.0, HB)


def _mesh(grid):
    return np.broadcast_arrays(*grid.mesh())


def _wick_gaussian(grid, x0=1.0, v0=0.0):
    X, V = _mesh(grid)
    f = np.exp(-0.5 * (X - x0) ** 2 - (V - v0) ** 2 / 0.5)
    f /= f.sum() * grid.cell
    return wick_quantize(f, HB, grid=grid)


def _purity(op):
    return float(op.h * np.trace(op.matrix @ op.matrix).real)


def test_free_gaussian_spreading(g):
    h = 2 * math.pi * HB
    psi = coherent_state(g, HB, 0.0, 0.0)
    op = DensityOperator(np.outer(psi, psi.conj()) / h, g, HB)
    state = HartreeState.start(op, InteractionKernel.zero(g), 0.01)
    out, rec = solve_hartree(state, 1.0, observers={"purity": lambda s: _purity(s.op)}, every=20)
    assert np.ptp(rec["purity"]) < 1e-12
    rho = diag_operator(out.op)
    # |psi|^2 has variance hbar/2 and spreads as hbar/2 + hbar t^2/2
    var = np.sum(g.x ** 2 * rho) * g.dx
    assert var == pytest.approx(HB / 2 + HB / 2 * 1.0 ** 2, abs=1e-4)


def test_stationary_projector_is_fixed():
    grid = PhaseGrid.for_hbar(128, 16.0, HB)
    K = InteractionKernel.regularized_coulomb(grid, 0.25, sign=-1)
    s0 = stationary_state(grid, HB, K, n_states=2)
    r0 = diag_operator(s0)
    # the splitting error of the projector is O(dt^2)
    drifts = []
    for dt in (1 / 256, 1 / 512):
        out, _ = solve_hartree(HartreeState.start(s0, K, dt), 0.25)
        drifts.append(np.abs(diag_operator(out.op) - r0).max())
    assert 3.5 < drifts[0] / drifts[1] < 4.5
    out, _ = solve_hartree(HartreeState.start(s0, K, 1 / 2048), 1.0)
    assert np.abs(diag_operator(out.op) - r0).max() < 1e-6


def test_richardson_order(g):
    K = InteractionKernel.regularized_coulomb(g, 0.25)
    w0 = _wick_gaussian(g)
    dts = (0.2, 0.1, 0.05)
    diffs = []
    for d in dts:
        a = hartree_step(HartreeState.start(w0, K, d), diagnose=False).op.matrix
        b = hartree_step(hartree_step(HartreeState.start(w0, K, d / 2), diagnose=False),
                         diagnose=False).op.matrix
        diffs.append(np.abs(a - b).max())
    assert np.polyfit(np.log(dts), np.log(diffs), 1)[0] >= 1.8


def test_zero_span_identity(g):
    state = HartreeState.start(_wick_gaussian(g), InteractionKernel.zero(g), 0.01)
    out, rec = solve_hartree(state, 0.0)
    assert out is state and rec["t"] == [0.0]


def test_conservation(g):
    K = InteractionKernel.regularized_coulomb(g, 0.25)
    w0 = _wick_gaussian(g, v0=0.5)
    out, _ = solve_hartree(HartreeState.start(w0, K, 0.005, moments=True), 1.0, every=50,
                           moments=True)
    d0, d1 = out.diagnostics[0], out.diagnostics[-1]
    assert abs(d1["trace"] - d0["trace"]) < 1e-10
    assert abs(d1["energy"] - d0["energy"]) / abs(d0["energy"]) < 1e-3
    for p in (1, 2, 3, math.inf):
        assert abs(schatten_norm(out.op, p) - schatten_norm(w0, p)) < 1e-8
    assert np.linalg.eigvalsh(out.op.matrix)[0] >= -1e-9
    for k in MOMENT_ORDERS:
        vals = [d[f"moment_{k}"] for d in out.diagnostics]
        assert np.all(np.isfinite(vals))


def test_blowup_detected(g, monkeypatch):
    import kslab.hartree as hm

    state = HartreeState.start(_wick_gaussian(g), InteractionKernel.zero(g), 0.01)
    monkeypatch.setattr(hm, "conjugate_kinetic", lambda M, ph: 100.0 * M)
    with pytest.raises(BlowupDetected):
        hartree_step(state)


# energy -------------------------------------------------------------------------------

def test_energy_of_uniform_zero_momentum_state():
    grid = PhaseGrid.for_hbar(64, 16.0, HB)
    h = 2 * math.pi * HB
    u = np.full(64, 1 / 8.0)
    op = DensityOperator(np.outer(u, u) / h, grid, HB)
    assert np.allclose(diag_operator(op), 1 / grid.length_x, rtol=1e-14)
    # neutralizing background: the uniform density carries no potential energy
    for K in (InteractionKernel.regularized_coulomb(grid, 0.25), InteractionKernel.gaussian(grid, 1.0)):
        assert abs(total_energy(op, K)) < 1e-14


def test_kinetic_energy_is_wigner_moment():
    for hb, n in ((0.2, 64), (0.1, 128), (0.05, 256)):
        grid = PhaseGrid.for_hbar(n, 16.0, hb)
        X, V = _mesh(grid)
        f = np.exp(-0.5 * X ** 2 - (V - 0.5) ** 2 / 0.8)
        f /= f.sum() * grid.cell
        op = wick_quantize(f, hb, grid=grid)
        kin = total_energy(op, InteractionKernel.zero(grid))
        moment = 0.5 * np.sum(V ** 2 * wigner_transform(op)) * grid.cell
        assert kin == pytest.approx(moment, abs=1e-4)
        assert kin == pytest.approx(0.5 * momentum_moment(op, 2), rel=1e-14)


# linear Hartree ----------------------------------------------------------------------------

def test_linear_hartree_uniform_history(g):
    K = InteractionKernel.regularized_coulomb(g, 0.25)
    op0 = _wick_gaussian(g)
    times = np.linspace(0, 1, 101)
    hist = PotentialHistory.from_densities(K, times, [np.full(g.n_x, 1 / g.length_x)] * len(times))
    out, rec = solve_linear_hartree(op0, hist, 1.0, 0.01,
                                    observers={"purity": lambda op, t: _purity(op)}, every=10)
    assert np.ptp(rec["purity"]) < 1e-12
    assert out.scaled_trace == pytest.approx(op0.scaled_trace, abs=1e-12)
    free, _ = solve_hartree(HartreeState.start(op0, InteractionKernel.zero(g), 0.01), 1.0)
    assert np.abs(out.matrix - free.op.matrix).max() < 1e-12
    with pytest.raises(HistoryGap):
        solve_linear_hartree(op0, hist, 1.0, 0.005)
    with pytest.raises(HistoryGap):
        hist(1.5)


def test_wick_sqrt_squared_trace():
    """h Tr Wick(sqrt f)^2 against the coherent-overlap double quadrature."""
    grid = PhaseGrid.for_hbar(64, 16.0, HB)
    h = 2 * math.pi * HB
    X, V = _mesh(grid)
    f = np.exp(-0.5 * X ** 2 - (V - 0.5) ** 2 / 0.8)
    f /= f.sum() * grid.cell
    w = wick_quantize(np.sqrt(f), HB, grid=grid)
    op0 = w.like(w.matrix @ w.matrix, kind="state", validate=False)
    # |<psi_z|psi_z'>|^2 = exp(-|z - z'|^2 / (2 hbar)) at periodic offsets
    n = grid.n_x
    sx = np.fft.fftfreq(n) * n * grid.dx
    sv = np.fft.fftfreq(n) * n * grid.dv
    ker = np.exp(-(sx[:, None] ** 2 + sv[None, :] ** 2) / (2 * HB))
    sf = np.sqrt(f)
    conv = np.fft.ifft2(np.fft.fft2(sf) * np.fft.fft2(ker)).real
    oracle = np.sum(sf * conv) * grid.cell ** 2 / h
    assert op0.scaled_trace == pytest.approx(oracle, abs=1e-6)
    # and the mass of sqrt(f)^2 up to an O(hbar) gap
    assert abs(op0.scaled_trace - 1.0) < HB


def test_linear_hartree_reproduces_self_consistent_run(g):
    K = InteractionKernel.regularized_coulomb(g, 0.25, sign=1)
    weak = InteractionKernel.custom(g, 0.1 * K.samples, 0.1 * K.grad_samples)
    op0 = _wick_gaussian(g)
    dt = 0.01
    state, rec = solve_hartree(HartreeState.start(op0, weak, dt), 0.5,
                               observers={"rho": lambda s: diag_operator(s.op)})
    hist = PotentialHistory.from_densities(weak, rec["t"], rec["rho"])
    lin, _ = solve_linear_hartree(op0, hist, 0.5, dt)
    assert schatten_norm(lin.like(lin.matrix - state.op.matrix, kind="general"), 1) < 1e-2


# B-term -----------------------------------------------------------------------------------

def _density(grid, shift=0.0):
    X, V = _mesh(grid)
    f = np.exp(-0.5 * (X - shift) ** 2 - V ** 2 / 0.5)
    return KineticDensity(grid, f / (f.sum() * grid.cell))


def test_b_term_vanishes_for_quadratic_kernel(g):
    B, nb = b_term(_density(g, 0.7), HB, InteractionKernel.harmonic(g, 1.3))
    assert nb < 1e-12
    assert np.abs(B.matrix).max() < 1e-12


def test_b_term_linear_in_weyl_factor(g):
    K = InteractionKernel.regularized_coulomb(g, 0.25)
    f = _density(g)
    X, V = _mesh(g)
    # odd in xi: changes Weyl(f) but not rho_f, so the potential bracket is fixed
    q = 0.2 * f.values * V * np.exp(-V ** 2)
    B0 = b_term(f, HB, K, return_norm=False).matrix
    B1 = b_term(KineticDensity(g, f.values + q), HB, K, return_norm=False).matrix
    B2 = b_term(KineticDensity(g, f.values + 2 * q), HB, K, return_norm=False).matrix
    assert np.abs((B2 - B0) - 2 * (B1 - B0)).max() < 1e-14 * 64
    assert np.abs(B1 - B0).max() > 0
