import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.interpolate import make_interp_spline
from scipy.optimize import linprog

from kslab import _kernels

needs_compiled = pytest.mark.skipif(_kernels.compiled is None, reason="extension not built")
BACKENDS = [_kernels.pure] + ([_kernels.compiled] if _kernels.compiled is not None else [])


def _lp_cost(a, b, C):
    m, n = C.shape
    A = np.zeros((m + n, m * n))
    for i in range(m):
        A[i, i * n:(i + 1) * n] = 1
    for j in range(n):
        A[m + j, j::n] = 1
    res = linprog(C.ravel(), A_eq=A, b_eq=np.concatenate([a, b]), method="highs")
    return res.fun


@pytest.mark.parametrize("impl", BACKENDS)
def test_simplex_matches_linprog(impl):
    rng = np.random.default_rng(11)
    for m, n in ((5, 7), (12, 9), (20, 20)):
        a = rng.random(m)
        b = rng.random(n)
        a /= a.sum()
        b /= b.sum()
        C = rng.random((m, n))
        rows, cols, flows, u, v, it, ok = impl.network_simplex(a, b, C, 100000, 1e-13)
        assert ok
        assert np.sum(flows * C[rows, cols]) == pytest.approx(_lp_cost(a, b, C), abs=1e-12)
        # dual feasibility and complementary slackness
        assert np.all(C - u[:, None] - v[None, :] >= -1e-12)
        assert np.abs(C[rows, cols] - u[rows] - v[cols]).max() < 1e-12


@needs_compiled
@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 15), st.integers(2, 15))
def test_simplex_backends_agree(seed, m, n):
    rng = np.random.default_rng(seed)
    a = rng.random(m) + 0.01
    b = rng.random(n) + 0.01
    b *= a.sum() / b.sum()
    C = rng.random((m, n))
    p = _kernels.pure.network_simplex(a, b, C, 100000, 1e-13)
    c = _kernels.compiled.network_simplex(a, b, C, 100000, 1e-13)
    assert p[6] and c[6]
    assert np.sum(p[2] * C[p[0], p[1]]) == pytest.approx(np.sum(c[2] * C[c[0], c[1]]), abs=1e-13)


@pytest.mark.parametrize("impl", BACKENDS)
def test_spline_shift_by_integer_is_roll(impl):
    rng = np.random.default_rng(2)
    coef = rng.random((3, 16))
    out = impl.shift_rows(coef, np.array([0.0, 1.0, -3.0]))
    nodal = impl.shift_rows(coef, np.zeros(3))
    assert np.allclose(out[1], np.roll(nodal[1], 1), atol=1e-14)
    assert np.allclose(out[2], np.roll(nodal[2], -3), atol=1e-14)


@pytest.mark.parametrize("impl", BACKENDS)
def test_eval_points_matches_scipy_spline(impl):
    # periodic cubic interpolant through samples of a smooth periodic function
    n = 32
    x = np.arange(n + 1)
    y = np.sin(2 * np.pi * x / n) + 0.3 * np.cos(6 * np.pi * x / n)
    spl = make_interp_spline(x, y, k=3, bc_type="periodic")
    # B-spline coefficients on the integer knots: solve the circulant nodal system
    row = np.zeros(n)
    row[[0, 1, -1]] = [4 / 6, 1 / 6, 1 / 6]
    coef = np.ascontiguousarray(np.fft.ifft(np.fft.fft(y[:-1]) / np.fft.fft(row)).real)
    pos = np.random.default_rng(0).uniform(0, n, 200)
    assert np.abs(impl.eval_points(coef, pos) - spl(pos)).max() < 1e-12


@needs_compiled
@given(st.integers(0, 2 ** 32 - 1))
def test_spline_backends_agree(seed):
    rng = np.random.default_rng(seed)
    coef = rng.random((8, 32))
    s = rng.uniform(-40, 40, 8)
    a = _kernels.pure.shift_rows(coef, s)
    b = _kernels.compiled.shift_rows(coef, s)
    assert np.abs(a - b).max() < 1e-13
    pos = rng.uniform(-5, 40, 50)
    assert np.abs(_kernels.pure.eval_points(coef[0], pos)
                  - _kernels.compiled.eval_points(coef[0], pos)).max() < 1e-13


def test_pure_python_switch():
    env = dict(os.environ, KSLAB_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from kslab import _kernels; print(_kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
