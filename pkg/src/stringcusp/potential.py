"""Separable string potential.

<p|V_a(t)|p'> = eps_a chi_a(p) chi_a(p') int exp(-i (p - p').x(s,t)) g(s) ds

with a sharp momentum cutoff chi_a(p) = theta(1/a - |p|) and a smooth
compactly supported longitudinal form factor g.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .oscquad import QuadratureConfig, oscillatory_1d


@dataclass(frozen=True)
class PotentialParams:
    a: float = 0.1
    eps_a: float = -1.0 / (2.0 * math.pi**2)
    R: float = 10.0
    w: float = 1.0

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("a must be positive")
        if not self.eps_a < 0:
            raise ValueError("eps_a must be negative")
        if not self.R >= 1:
            raise ValueError("R must be >= 1")
        if not self.w > 0:
            raise ValueError("w must be positive")

    @property
    def cutoff(self) -> float:
        return 1.0 / self.a

    @property
    def support(self) -> tuple[float, float]:
        return -(self.R + self.w), self.R + self.w


def chi(p, a: float):
    """Indicator of the open ball |p| < 1/a (boundary maps to 0)."""
    if not a > 0:
        raise ValueError("a must be positive")
    p = np.asarray(p, float)
    return (np.linalg.norm(p, axis=-1) < 1.0 / a).astype(float)


def _bump(x):
    x = np.asarray(x, float)
    pos = x > 0
    out = np.zeros_like(x)
    out[pos] = np.exp(-1.0 / x[pos])
    return out


def smooth_step(xi):
    """C-infinity step: 0 for xi <= 0, 1 for xi >= 1, and h(xi) + h(1-xi) = 1."""
    xi = np.asarray(xi, float)
    a, b = _bump(xi), _bump(1.0 - xi)
    return a / (a + b)


def form_factor(s, R: float, w: float):
    s = np.abs(np.asarray(s, float))
    out = 1.0 - smooth_step((s - R) / w)
    return out if out.ndim else float(out)


def form_factor_ft(k, R: float, w: float, quad: QuadratureConfig = QuadratureConfig()):
    """g_hat(k) = int g(s) exp(-i k s) ds (real, since g is even)."""
    k = np.atleast_1d(np.asarray(k, float))
    L = R + w

    # the plateau part is elementary; only the two transition layers are integrated
    def layer(s):
        return (form_factor(s, R, w) - 1.0 * (s <= R))[:, None] * np.cos(np.outer(s, k))

    kk = np.where(k == 0, 1.0, k)
    plateau = np.where(k == 0, 2.0 * R, 2.0 * np.sin(kk * R) / kk)
    kmax = float(np.max(np.abs(k))) if k.size else 0.0
    trans = oscillatory_1d(layer, None, lambda s: np.full_like(s, kmax), (R, L), quad)
    return plateau + 2.0 * np.real(trans)


def matrix_element(p, pp, t: float, curve, params: PotentialParams,
                   quad: QuadratureConfig = QuadratureConfig()) -> complex:
    p = np.asarray(p, float)
    pp = np.asarray(pp, float)
    pref = params.eps_a * float(chi(p, params.a)) * float(chi(pp, params.a))
    if pref == 0.0:
        return 0j
    q = p - pp

    def amp(s):
        return form_factor(s, params.R, params.w)

    def phase(s):
        return -(curve.position(s, t) @ q)

    def rate(s):
        return -(curve.tangent(s, t) @ q)

    val = oscillatory_1d(amp, phase, rate, params.support, quad, where={"t": t})
    return complex(pref * val)
