"""Transverse bound state of the straight string.

Evaluating the disk integral of the bound-state condition in polar coordinates,

    1 + 2 pi eps_a * pi * ln((kappa^2 + 1/a^2) / (kappa^2 + p3^2)) = 0,

gives the closed form kappa^2(p3) = (1/a^2 - e^beta p3^2) / (e^beta - 1) with
beta = -1 / (2 pi^2 eps_a).  The bound wave is
phi(p) = chi_a(p) C(p3) / (kappa^2(p3) + |p|^2) with an even Gaussian C.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import optimize

from .errors import InvalidCoupling, NoBoundState
from .oscquad import QuadratureConfig, gauss_legendre, oscillatory_1d


def beta(eps_a: float) -> float:
    if not eps_a < 0:
        raise InvalidCoupling(f"eps_a must be negative, got {eps_a}")
    return -1.0 / (2.0 * math.pi**2 * eps_a)


def _kappa_sq_raw(p3, a: float, b: float):
    return (1.0 / a**2 - math.exp(b) * np.asarray(p3, float) ** 2) / math.expm1(b)


def kappa_sq(p3: float, a: float, eps_a: float) -> float:
    k2 = float(_kappa_sq_raw(p3, a, beta(eps_a)))
    if k2 <= 0:
        raise NoBoundState(f"no bound state at p3={p3}")
    return k2


def _level_function(k2, p3, a, eps_a):
    return 1.0 + 2.0 * math.pi * eps_a * math.pi * math.log((k2 + 1.0 / a**2) / (k2 + p3 * p3))


def kappa_sq_numeric(p3: float, a: float, eps_a: float, tol: float = 1e-13) -> float:
    """Root of the level function by bracketed Brent iteration (bisection + secant)."""
    beta(eps_a)
    lo = 0.0
    hi = 1.0 / a**2
    # level function -> -inf at k2 = 0 when p3^2 is zero (or underflows)
    f_lo = _level_function(lo, p3, a, eps_a) if p3 * p3 > 0 else -math.inf
    if not f_lo < 0:
        raise NoBoundState(f"no bound state at p3={p3}")
    # level function -> 1 as kappa^2 -> inf, so a positive upper end always exists
    while _level_function(hi, p3, a, eps_a) <= 0:
        hi *= 2.0
        if hi > 1e300:
            raise NoBoundState("bracket expansion failed")
    lo_b = max(1e-300, lo)
    if _level_function(lo_b, p3, a, eps_a) >= 0:
        raise NoBoundState(f"no sign change for p3={p3}")
    return optimize.brentq(_level_function, lo_b, hi, args=(p3, a, eps_a), rtol=tol, xtol=1e-300)


def disk_integral_quadrature(k2: float, p3: float, a: float, n_rho: int = 200, n_phi: int = 16) -> float:
    """int chi_a(p) dp1 dp2 / (k2 + p^2) by a polar tensor rule (independent check)."""
    rho_max = math.sqrt(max(1.0 / a**2 - p3 * p3, 0.0))
    x, w = gauss_legendre(n_rho)
    rho = 0.5 * rho_max * (x + 1.0)
    wr = 0.5 * rho_max * w
    phi = np.linspace(0.0, 2.0 * math.pi, n_phi, endpoint=False)
    vals = rho[:, None] / (k2 + p3 * p3 + rho[:, None] ** 2) * np.ones_like(phi)[None, :]
    return float(np.sum(wr[:, None] * vals) * 2.0 * math.pi / n_phi)


@dataclass(frozen=True)
class PacketProfile:
    sigma3: float = 1.0
    amplitude: float = 1.0

    def __call__(self, p3):
        return self.amplitude * np.exp(-np.asarray(p3, float) ** 2 / (2.0 * self.sigma3**2))


def packet_C(p3, packet: PacketProfile):
    return packet(p3)


@dataclass(frozen=True)
class BoundState:
    beta: float
    a: float
    packet: PacketProfile

    @classmethod
    def build(cls, a: float, eps_a: float, sigma3: float = 1.0, amplitude: float | str = "auto",
              quad: QuadratureConfig = QuadratureConfig()) -> "BoundState":
        b = beta(eps_a)
        p3_max = math.exp(-b / 2.0) / a
        if sigma3 > p3_max / 4.0:
            raise ValueError(f"sigma3={sigma3} exceeds p3_max/4={p3_max / 4.0:.6g}")
        st = cls(b, a, PacketProfile(sigma3, 1.0))
        if amplitude == "auto":
            amp = 1.0 / math.sqrt(phi_norm(st, quad))
        else:
            amp = float(amplitude)
        return replace(st, packet=PacketProfile(sigma3, amp))

    @property
    def eps_a(self) -> float:
        return -1.0 / (2.0 * math.pi**2 * self.beta)

    @property
    def p3_max(self) -> float:
        return math.exp(-self.beta / 2.0) / self.a

    def kappa_sq(self, p3: float) -> float:
        return kappa_sq(p3, self.a, self.eps_a)

    def kappa_sq_array(self, p3):
        """Vectorised kappa^2; NaN outside the existence region."""
        k2 = _kappa_sq_raw(p3, self.a, self.beta)
        return np.where(k2 > 0, k2, np.nan)

    def packet_C(self, p3):
        p3 = np.asarray(p3, float)
        return np.where(np.abs(p3) < self.p3_max, self.packet(p3), 0.0)

    def phi(self, p):
        """phi_kappa(p), zero outside the cutoff ball and the existence region."""
        p = np.asarray(p, float)
        p3 = p[..., 2]
        p2 = np.sum(p * p, axis=-1)
        inside = (p2 < 1.0 / self.a**2) & (np.abs(p3) < self.p3_max)
        k2 = np.where(inside, _kappa_sq_raw(p3, self.a, self.beta), 1.0)
        out = np.where(inside, self.packet(p3) / (k2 + p2), 0.0)
        return out if out.ndim else float(out)


def phi_kappa(p, state: BoundState):
    return state.phi(p)


def phi_norm(state: BoundState, quad: QuadratureConfig = QuadratureConfig(), n_rho: int = 64) -> float:
    """(2 pi)^-3 int |phi|^2 d^3p: adaptive in p3, fixed Gauss-Legendre in rho."""
    P = min(1.0 / state.a, state.p3_max)
    xg, wg = gauss_legendre(n_rho)

    def amp(p3):
        rho_max = np.sqrt(np.maximum(1.0 / state.a**2 - p3**2, 0.0))
        k2 = np.nan_to_num(state.kappa_sq_array(p3), nan=1.0)
        rho = 0.5 * rho_max[:, None] * (xg[None, :] + 1.0)
        inner = np.sum(0.5 * rho_max[:, None] * wg[None, :] * rho
                       / (k2[:, None] + p3[:, None] ** 2 + rho**2) ** 2, axis=1)
        return 2.0 * math.pi * state.packet_C(p3) ** 2 * inner

    sig = state.packet.sigma3
    val = oscillatory_1d(amp, None, lambda x: np.full_like(x, 1.0 / sig), (-P, P), quad)
    return float(np.real(val)) / (2.0 * math.pi) ** 3


def kappa_table(state: BoundState, n: int = 50) -> np.ndarray:
    p3 = np.linspace(0.0, 0.999 * state.p3_max, n)
    return np.column_stack([p3, [state.kappa_sq(x) for x in p3]])
