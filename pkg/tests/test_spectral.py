import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from stringcusp.potential import PotentialParams
from stringcusp.spectral import LongitudinalRule, filon_weights, fourier_filon_fft, lagrange6
from stringcusp.spectrum import BoundState


def _cquad(f, lo, hi):
    re = integrate.quad(lambda x: f(x).real, lo, hi, epsabs=1e-14, epsrel=1e-13, limit=400)[0]
    im = integrate.quad(lambda x: f(x).imag, lo, hi, epsabs=1e-14, epsrel=1e-13, limit=400)[0]
    return re + 1j * im


def test_fourier_filon_linear_exact():
    n_fft, dt = 256, 0.05
    dy = 2 * math.pi / (n_fft * dt)
    M = 40
    y_end = M * dy + 0.37 * dy
    y = dy * np.arange(M + 1)
    f = (1.0 + 2.0 * y)[None, :]
    out = fourier_filon_fft(f, dy, dt, 20, n_fft, y_end, np.array([1.0 + 2.0 * y_end]))[0]
    for n in (0, 1, 7, 19):
        t = n * dt
        ref = _cquad(lambda v: (1 + 2 * v) * np.exp(-1j * v * t), 0, y_end)
        assert abs(out[n] - ref) < 1e-10 * max(1.0, abs(ref))


def test_fourier_filon_smooth_convergence():
    # a smooth integrand converges at second order in dy
    t_probe = 0.6
    errs = []
    for n_fft in (512, 1024, 2048):
        dt = 0.2
        dy = 2 * math.pi / (n_fft * dt)
        M = int(3.0 / dy)
        y = dy * np.arange(M + 1)
        y_end = 3.0
        out = fourier_filon_fft(np.exp(-y)[None, :], dy, dt, 4, n_fft, y_end, np.array([math.exp(-3.0)]))[0]
        ref = _cquad(lambda v: np.exp(-v - 1j * v * t_probe), 0, 3.0)
        errs.append(abs(out[3] - ref))
    assert errs[1] < errs[0] / 3 and errs[2] < errs[1] / 3


def test_fourier_filon_validation():
    f = np.ones((1, 10))
    with pytest.raises(ValueError):
        fourier_filon_fft(f, 0.1, 0.1, 4, 64)
    dt = 2 * math.pi / (8 * 0.1)
    with pytest.raises(ValueError):
        fourier_filon_fft(f, 0.1, dt, 4, 8)
    with pytest.raises(ValueError):
        fourier_filon_fft(np.ones((1, 4)), 0.1, 2 * math.pi / (8 * 0.1), 5, 8)


@pytest.mark.parametrize("lam", [0.0, 3.0, 40.0, -250.0])
def test_filon_weights_cubic_exact(lam):
    dt = 0.01
    n = 23
    t = dt * np.arange(n)
    F = 1 - 3 * t + 5 * t**2 - 7 * t**3 + 0.5j * t
    ref = _cquad(lambda x: np.exp(1j * lam * x) * (1 - 3 * x + 5 * x**2 - 7 * x**3 + 0.5j * x), 0, t[-1])
    assert abs(np.sum(filon_weights(n, dt, lam) * F) - ref) < 1e-13


def test_filon_weights_short_grids():
    assert filon_weights(1, 0.1, 5.0).shape == (1,) and filon_weights(1, 0.1, 5.0)[0] == 0
    w = filon_weights(3, 0.1, 7.0)
    t = 0.1 * np.arange(3)
    ref = _cquad(lambda x: np.exp(7j * x) * (2 - x), 0, 0.2)
    assert abs(np.sum(w * (2 - t)) - ref) < 1e-13


@settings(max_examples=60, deadline=None)
@given(lam=st.floats(-500, 500, allow_subnormal=False), n=st.integers(4, 40))
def test_filon_weights_constant(lam, n):
    dt = 0.013
    L = (n - 1) * dt
    ref = L if lam == 0 else 2 * math.sin(lam * L / 2) / lam * np.exp(0.5j * lam * L)
    assert abs(np.sum(filon_weights(n, dt, lam)) - ref) < 1e-12


def test_lagrange6_polynomial_exact():
    h, n = 0.1, 50
    grid = h * np.arange(n)
    x = np.random.default_rng(4).uniform(0, grid[-1], 200)
    idx, w = lagrange6(h, n, x)
    assert np.allclose(w.sum(-1), 1.0, atol=1e-13, rtol=0)
    poly = lambda v: 1 - v + 0.3 * v**2 - 0.02 * v**5
    assert np.max(np.abs(np.sum(poly(grid)[idx] * w, -1) - poly(x))) < 1e-11
    # nodes reproduce the samples
    idx, w = lagrange6(h, n, grid[7:9])
    assert np.allclose(np.sum(poly(grid)[idx] * w, -1), poly(grid[7:9]), atol=1e-14, rtol=0)


def test_longitudinal_rule_packet_mass():
    par = PotentialParams(a=0.1)
    state = BoundState.build(par.a, par.eps_a, 1.0, amplitude=1.0)
    rule = LongitudinalRule.build(state, z_max=2.0, t_max=0.5)
    # 2 int_0^P C = sqrt(2 pi) sigma erf(P / (sigma sqrt 2)), P = min(7 sigma, p3_max)
    P = min(7.0, state.p3_max)
    assert abs(rule.weights.sum() - math.sqrt(2 * math.pi) * math.erf(P / math.sqrt(2))) < 1e-12
    assert np.all(rule.p3 > 0) and np.all(rule.p3 < state.p3_max)
