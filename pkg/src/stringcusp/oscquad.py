"""Oscillatory quadrature primitives.

* :func:`bessel_j0`      -- J0 to ~1e-15 absolute.
* :func:`oscillatory_1d` -- adaptive Gauss-Legendre panels sized from the
  analytic phase rate.
* :func:`kernel_K`       -- radial reduction of the free kernel
  K(tau, d) = i int_{|p|<1/a} d^3p exp(i(-p^2 tau + p.d)).
* :func:`I0_eval`        -- cylindrical reduction of the Born source field I0(s, t).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import special

from .errors import QuadratureFailure


@dataclass(frozen=True)
class QuadratureConfig:
    abs_tol: float = 1e-10
    rel_tol: float = 1e-8
    max_panels: int = 20000
    panel_rule_order: int = 10

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("quadrature tolerances must be positive")
        if self.max_panels < 64:
            raise ValueError("max_panels must be >= 64")
        if self.panel_rule_order < 2:
            raise ValueError("panel_rule_order must be >= 2")

    def tightened(self, factor: float) -> "QuadratureConfig":
        return QuadratureConfig(
            self.abs_tol / factor, self.rel_tol / factor, self.max_panels, self.panel_rule_order
        )


@lru_cache(maxsize=None)
def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


# ---------------------------------------------------------------------------
# Bessel J0

_BIG = 1e250


def _j0_series(x):
    q = -(x * x) / 4.0
    term = np.ones_like(x)
    total = np.ones_like(x)
    for k in range(1, 60):
        term = term * q / (k * k)
        total = total + term
    return total


def _j0_recurrence(x):
    # Miller backward recurrence normalised by 1 = J0 + 2 sum J_2k
    n_start = int(2 * ((np.max(x) + 40) // 2) + 20)
    j_next = np.zeros_like(x)
    j_cur = np.full_like(x, 1e-30)
    norm = np.zeros_like(x)
    j0 = None
    for k in range(n_start, 0, -1):
        j_prev = (2.0 * k / x) * j_cur - j_next
        j_next, j_cur = j_cur, j_prev
        if (k - 1) % 2 == 0 and k - 1 > 0:
            norm = norm + 2.0 * j_cur
        big = np.abs(j_cur) > _BIG
        if np.any(big):
            scale = np.where(big, 1.0 / _BIG, 1.0)
            j_cur, j_next, norm = j_cur * scale, j_next * scale, norm * scale
    j0 = j_cur
    return j0 / (j0 + norm)


def _j0_asymptotic(x):
    # Hankel expansion; smallest retained term ~ e^{-2x}
    mu = 0.0
    z = 8.0 * x
    p = np.ones_like(x)
    q = np.zeros_like(x)
    term = np.ones_like(x)
    k = 1
    while k < 60:
        term = term * (mu - (2 * k - 1) ** 2) / (k * z)
        if k % 2 == 1:
            q = q + term * (1 if (k // 2) % 2 == 0 else -1)
        else:
            p = p + term * (1 if (k // 2) % 2 == 0 else -1)
        k += 1
        if np.max(np.abs(term)) < 1e-17:
            break
    chi = x - math.pi / 4.0
    return np.sqrt(2.0 / (math.pi * x)) * (p * np.cos(chi) - q * np.sin(chi))


def bessel_j0(x):
    """Bessel function of the first kind, order zero."""
    x = np.abs(np.asarray(x, float))
    out = np.empty_like(x)
    small = x < 8.0
    large = x >= 40.0
    mid = ~small & ~large
    if np.any(small):
        out[small] = _j0_series(x[small])
    if np.any(mid):
        out[mid] = _j0_recurrence(x[mid])
    if np.any(large):
        out[large] = _j0_asymptotic(x[large])
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# adaptive oscillatory quadrature


@dataclass
class QuadInfo:
    panels: int
    evaluations: int
    error_estimate: float


def _initial_panels(rate: Callable | None, lo: float, hi: float) -> np.ndarray:
    """Panel edges with width <= pi / max(|rate|, 1)."""
    if rate is None:
        return np.array([lo, hi])
    n_probe = 257
    while True:
        x = np.linspace(lo, hi, n_probe)
        r = np.maximum(np.abs(np.asarray(rate(x), float)), 1.0)
        if r.ndim > 1:
            r = r.reshape(r.shape[0], -1).max(axis=1)
        # cumulative phase budget; the probe grid must be finer than the panels
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (r[1:] + r[:-1]) * np.diff(x))])
        n_pan = int(math.ceil(cum[-1] / math.pi))
        if n_probe >= 4 * n_pan + 1 or n_probe > 4_000_000:
            break
        n_probe = 4 * n_pan + 1
    n_pan = max(n_pan, 1)
    targets = np.linspace(0.0, cum[-1], n_pan + 1)
    edges = np.interp(targets, cum, x)
    edges[0], edges[-1] = lo, hi
    return edges


def _panel_values(f, left, right, xg, wg):
    half = 0.5 * (right - left)
    mid = 0.5 * (right + left)
    pts = mid[:, None] + half[:, None] * xg[None, :]
    vals = np.asarray(f(pts.ravel()))
    vals = vals.reshape(pts.shape + vals.shape[1:])
    w = (half[:, None] * wg[None, :]).reshape(pts.shape + (1,) * (vals.ndim - 2))
    return np.sum(vals * w, axis=1)


def oscillatory_1d(
    amplitude: Callable,
    phase: Callable | None,
    phase_rate: Callable | None,
    interval: tuple[float, float],
    quad: QuadratureConfig = QuadratureConfig(),
    full_output: bool = False,
    where: dict | None = None,
):
    """Integral of amplitude(x) * exp(i phase(x)) over ``interval``.

    ``amplitude`` (and ``phase``) must accept a 1-D array of abscissae.  The
    amplitude may return extra trailing axes; those components are integrated
    together on shared panels and the error test uses the worst component.
    """
    lo, hi = map(float, interval)
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise ValueError("interval must be finite")
    sign = 1.0
    if hi < lo:
        lo, hi, sign = hi, lo, -1.0
    if hi == lo:
        val = np.asarray(amplitude(np.array([lo])))[0] * 0.0 + 0.0j
        return (val, QuadInfo(0, 0, 0.0)) if full_output else val

    if phase is None:
        f = amplitude
    else:
        def f(x):
            a = np.asarray(amplitude(x))
            e = np.exp(1j * np.asarray(phase(x)))
            return a * e.reshape(e.shape + (1,) * (a.ndim - e.ndim))

    xg, wg = gauss_legendre(quad.panel_rule_order)
    edges = _initial_panels(phase_rate, lo, hi)
    if len(edges) - 1 > quad.max_panels:
        raise QuadratureFailure(
            f"initial partition needs {len(edges) - 1} panels > max_panels={quad.max_panels}",
            where,
        )
    left, right = edges[:-1], edges[1:]
    coarse = _panel_values(f, left, right, xg, wg)
    mid = 0.5 * (left + right)
    h1 = _panel_values(f, left, mid, xg, wg)
    h2 = _panel_values(f, mid, right, xg, wg)
    evaluations = 3 * len(left) * len(xg)

    while True:
        fine = h1 + h2
        err = np.abs(fine - coarse)
        if err.ndim > 1:
            err = err.reshape(err.shape[0], -1).max(axis=1)
        total = fine.sum(axis=0)
        tol = max(quad.abs_tol, quad.rel_tol * float(np.max(np.abs(total))))
        err_sum = float(err.sum())
        if err_sum <= tol:
            break
        # equidistribute: split every panel above its share, at least the worst
        split = err > tol / len(err)
        if not np.any(split):
            split[np.argmax(err)] = True
        n_new = len(err) + int(split.sum())
        if n_new > quad.max_panels:
            raise QuadratureFailure(
                f"max_panels={quad.max_panels} exhausted (error {err_sum:.3e} > tol {tol:.3e})",
                where,
            )
        keep = ~split
        sl, sr, sm = left[split], right[split], mid[split]
        # children of a split panel reuse the parent's half values as coarse estimates
        new_left = np.concatenate([left[keep], sl, sm])
        new_right = np.concatenate([right[keep], sm, sr])
        new_coarse = np.concatenate([coarse[keep], h1[split], h2[split]])
        new_mid = 0.5 * (new_left + new_right)
        nk = int(keep.sum())
        ch_left, ch_mid, ch_right = new_left[nk:], new_mid[nk:], new_right[nk:]
        c1 = _panel_values(f, ch_left, ch_mid, xg, wg)
        c2 = _panel_values(f, ch_mid, ch_right, xg, wg)
        evaluations += 2 * len(ch_left) * len(xg)
        h1 = np.concatenate([h1[keep], c1])
        h2 = np.concatenate([h2[keep], c2])
        left, right, mid, coarse = new_left, new_right, new_mid, new_coarse

    total = sign * total
    if full_output:
        return total, QuadInfo(len(left), evaluations, err_sum)
    return total


def fixed_panel_rule(edges: np.ndarray, order: int = 10) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre nodes and weights on the given panel edges."""
    xg, wg = gauss_legendre(order)
    left, right = edges[:-1], edges[1:]
    half = 0.5 * (right - left)
    mid = 0.5 * (right + left)
    x = (mid[:, None] + half[:, None] * xg[None, :]).ravel()
    w = (half[:, None] * wg[None, :]).ravel()
    return x, w


# ---------------------------------------------------------------------------
# kernel K


D_SWITCH = 1e-8


def kernel_K_closed_tau0(d, a: float):
    """K(0, d) from the elementary antiderivative (ball Fourier transform)."""
    d = np.asarray(d, float)
    P = 1.0 / a
    x = P * d
    xx = np.where(x < 0.5, 1.0, x)
    val = 4.0 * math.pi * P**3 * (np.sin(xx) - xx * np.cos(xx)) / xx**3
    # sin x - x cos x cancels for small x: use its series there
    x2 = np.minimum(x, 0.5) ** 2
    ser = np.zeros_like(x2)
    for n in range(9, 0, -1):
        ser = ser * x2 + (-1) ** (n + 1) * 2 * n / math.factorial(2 * n + 1)
    val = np.where(x < 0.5, 4.0 * math.pi * P**3 * ser, val)
    return 1j * val


def kernel_K(tau: float, d: float, a: float, quad: QuadratureConfig = QuadratureConfig()) -> complex:
    """K(tau, d) = i int_{|p|<1/a} exp(i(p.d - p^2 tau)) d^3p, radially reduced."""
    if tau < 0:
        raise ValueError("tau must be non-negative")
    P = 1.0 / a
    where = {"tau": tau, "d": d}
    if d < D_SWITCH:
        val = oscillatory_1d(
            lambda p: p * p, lambda p: -p * p * tau, lambda p: 2.0 * p * tau, (0.0, P), quad,
            where=where,
        )
        return complex(1j * 4.0 * math.pi * val)
    val = oscillatory_1d(
        lambda p: p * np.sin(p * d), lambda p: -p * p * tau, lambda p: 2.0 * p * tau + d, (0.0, P),
        quad, where=where,
    )
    return complex(1j * 4.0 * math.pi / d * val)


def kernel_bound(a: float) -> float:
    return 4.0 * math.pi / 3.0 / a**3


# ---------------------------------------------------------------------------
# Born source field I0


def I0_eval(s: float, t: float, curve, state, params, quad: QuadratureConfig = QuadratureConfig(),
            chunk: int = 64) -> complex:
    """I0(s,t) = int d^3p chi_a(p) exp(i[p.x(s,t) - p^2 t]) phi_kappa(p).

    The azimuthal integral gives 2 pi J0(rho r_perp); the remaining (p3, rho)
    integral is done as two nested adaptive oscillatory quadratures.
    """
    x = np.asarray(curve.position(s, t), float)
    r_perp = math.hypot(x[0], x[1])
    x3 = float(x[2])
    P = min(1.0 / params.a, state.p3_max)
    if P <= 0:
        return 0j

    def inner(p3):
        # rho = rho_max(p3) * v maps every fibre onto v in [0, 1]
        p3 = np.asarray(p3, float)
        rho_max = np.sqrt(np.maximum(1.0 / params.a**2 - p3**2, 0.0))
        denom0 = state.kappa_sq_array(p3) + p3**2

        def amp(v):
            rho = v[:, None] * rho_max[None, :]
            return (
                rho * rho_max[None, :]
                * special.j0(rho * r_perp)
                * np.exp(-1j * rho * rho * t)
                / (denom0[None, :] + rho * rho)
            )

        def rate(v):
            return 2.0 * v * float(np.max(rho_max)) ** 2 * abs(t) + float(np.max(rho_max)) * r_perp

        return oscillatory_1d(amp, None, rate, (0.0, 1.0), quad, where={"s": s, "t": t})

    def outer_amp(p3):
        out = np.empty(p3.shape, complex)
        for k in range(0, len(p3), chunk):
            sl = slice(k, k + chunk)
            out[sl] = inner(p3[sl])
        return 2.0 * math.pi * state.packet_C(p3) * out

    return complex(
        oscillatory_1d(
            outer_amp,
            lambda p3: p3 * x3 - p3 * p3 * t,
            lambda p3: np.abs(x3 - 2.0 * p3 * t) + 1.0 / state.packet.sigma3,
            (-P, P),
            quad,
            where={"s": s, "t": t},
        )
    )
