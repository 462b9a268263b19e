"""Observables: tail exponents, the cone of non-critical directions, and the
straight-string residual."""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import stats

from .errors import ConeEmpty, DegenerateFit
from .evolve import born_delta_psi, position_probe, psi
from .geometry import DEGENERATE, StraightLine, critical_point_scan
from .oscquad import QuadratureConfig, gauss_legendre
from .potential import PotentialParams

R2_GATE = 0.95
Q_MAX = 1e6


@dataclass(frozen=True)
class PowerFit:
    slope: float
    stderr: float
    r_squared: float
    intercept: float


def fit_power_law(p, magnitude) -> PowerFit:
    """Least-squares line through (ln p, ln |value|)."""
    p = np.asarray(p, float)
    m = np.asarray(magnitude, float)
    if len(p) < 8 or len(p) != len(m):
        raise ValueError("need at least 8 paired samples")
    if np.any(m <= 0) or not np.all(np.isfinite(m)):
        raise DegenerateFit("non-positive or non-finite magnitude")
    if np.ptp(p) == 0:
        raise DegenerateFit("all abscissae equal")
    if np.any(np.diff(p) <= 0):
        raise ValueError("p must be strictly increasing")
    y = np.log(m)
    if np.ptp(y) == 0:
        return PowerFit(0.0, 0.0, 1.0, float(y[0]))
    res = stats.linregress(np.log(p), y)
    return PowerFit(float(res.slope), float(res.stderr), float(res.rvalue**2), float(res.intercept))


@dataclass(frozen=True)
class TailFitResult:
    direction: tuple
    time: float
    window: tuple
    slope: float
    stderr: float
    r_squared: float
    n_samples: int
    samples: tuple = ()
    intercept: float = 0.0

    @property
    def conclusive(self) -> bool:
        return self.r_squared >= R2_GATE


@dataclass
class TailPipeline:
    """Everything a tail scan needs besides the direction and time."""

    curve: object
    state: object
    params: PotentialParams
    field: object
    quad: QuadratureConfig = dc_field(default_factory=QuadratureConfig)
    method: str = "filon"


def _unit(v):
    v = np.asarray(v, float)
    n = np.linalg.norm(v)
    if not abs(n - 1.0) < 1e-9:
        raise ValueError("direction must be a unit vector")
    return v


def tail_scan(direction, t: float, p_grid, pipe: TailPipeline) -> TailFitResult:
    """|delta psi(p u, t)| on ``p_grid`` and its log-log fit."""
    u = _unit(direction)
    p_grid = np.asarray(p_grid, float)
    if p_grid[0] <= 0 or p_grid[-1] >= 1.0 / pipe.params.a:
        raise ValueError("p grid must lie strictly inside (0, 1/a)")
    mags = np.array([
        abs(psi(p * u, t, pipe.state, pipe.field, pipe.curve, pipe.params, pipe.quad, pipe.method).delta)
        for p in p_grid
    ])
    floor = 10.0 * pipe.quad.abs_tol
    if np.all(mags < floor):
        raise DegenerateFit(f"no tail: |delta psi| below {floor:g} on the whole grid")
    fit = fit_power_law(p_grid, mags)
    return TailFitResult(tuple(u), float(t), (float(p_grid[0]), float(p_grid[-1])), fit.slope,
                         fit.stderr, fit.r_squared, len(p_grid), tuple(zip(p_grid, mags)), fit.intercept)


def position_exponent(origin, direction, radii, t: float, samples) -> TailFitResult:
    """Fit of |delta psi(origin + r u, t)| against r; ``samples`` from evolve.sample_delta_psi."""
    u = _unit(direction)
    radii = np.asarray(radii, float)
    origin = np.asarray(origin, float)
    mags = np.array([abs(position_probe(origin + r * u, t, samples)) for r in radii])
    fit = fit_power_law(radii, mags)
    return TailFitResult(tuple(u), float(t), (float(radii[0]), float(radii[-1])), fit.slope,
                         fit.stderr, fit.r_squared, len(radii), tuple(zip(radii, mags)), fit.intercept)


# ---------------------------------------------------------------------------
# cone of non-critical directions


@dataclass(frozen=True)
class DomainQSpec:
    epsilon1: float
    q_estimate: float


def direction_grid(n_polar: int = 40, n_azimuth: int = 8, max_polar: float = 1.5):
    """Unit vectors with polar angles in (0, max_polar] (log spaced) times azimuths."""
    th = np.geomspace(1e-3, max_polar, n_polar)
    ph = 2.0 * math.pi * np.arange(n_azimuth) / n_azimuth
    T, P = np.meshgrid(th, ph, indexing="ij")
    return np.stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)], axis=-1).reshape(-1, 3)


def estimate_domain_q(curve, epsilon1: float, s_grid, direction_grid_, n_t: int = 21) -> DomainQSpec:
    """Largest q such that no sampled direction with p1^2 + p2^2 < q p3^2 is critical on [0, eps1].

    A direction is critical when u.x'(s,t) has a root in the s window for some
    sampled t, or vanishes identically.  Directions are visited in order of
    increasing ratio (p1^2 + p2^2)/p3^2; the first critical one bounds q.
    """
    s_grid = np.asarray(s_grid, float)
    s_range = (float(s_grid[0]), float(s_grid[-1]))
    dirs = np.asarray(direction_grid_, float)
    dirs = dirs[np.abs(dirs[:, 2]) > 0]
    ratio = (dirs[:, 0] ** 2 + dirs[:, 1] ** 2) / dirs[:, 2] ** 2
    order = np.argsort(ratio, kind="stable")
    ts = np.linspace(0.0, epsilon1, n_t)

    def critical(u):
        for tt in ts:
            r = critical_point_scan(curve, u, float(tt), s_range, n=len(s_grid))
            if r is DEGENERATE or len(r) > 0:
                return True
        return False

    first = next((i for i, k in enumerate(order) if critical(dirs[k])), None)
    if first is None:
        return DomainQSpec(float(epsilon1), Q_MAX)
    if first == 0:
        raise ConeEmpty(f"the most axial sampled direction is critical for eps1={epsilon1}")
    return DomainQSpec(float(epsilon1), float(ratio[order[first]]))


# ---------------------------------------------------------------------------
# straight-string residual


@dataclass(frozen=True)
class ResidualReport:
    sample_points: tuple
    residuals: tuple
    max_abs_residual: float
    quad_tolerance_budget: float


class StaticSource:
    """Exact I(s,t) on the straight line for psi = e^{i kappa^2 t} phi.

    On each p3 fibre the disk integral equals beta/2 by the bound-state
    condition, so I(s,t) = pi beta int C(p3) exp(i p3 s + i kappa^2(p3) t) dp3.
    """

    def __init__(self, state, n_nodes: int, n_sigma: float = 10.0):
        P = min(n_sigma * state.packet.sigma3, state.p3_max)
        x, w = gauss_legendre(n_nodes)
        self.p3 = P * x
        self.k2 = np.asarray(state.kappa_sq_array(self.p3))
        self.W = math.pi * state.beta * P * w * state.packet_C(self.p3)
        self.s_rate = P
        self.t_rate = float(np.max(self.k2))

    def __call__(self, s, t):
        s, t = np.broadcast_arrays(np.asarray(s, float), np.asarray(t, float))
        ph = np.exp(1j * (s[..., None] * self.p3 + t[..., None] * self.k2))
        return ph @ self.W


def static_sample_set(n: int = 20, seed: int = 0, p_max: float = 6.0, p3_max: float = 2.5,
                      t_max: float = 0.4):
    """Reproducible (p, t) pairs inside the packet and the trusted time window."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        p = rng.uniform(-p_max, p_max, 3)
        p[2] = rng.uniform(-p3_max, p3_max)
        if np.linalg.norm(p) < p_max:
            out.append((tuple(p), float(rng.uniform(0.05, t_max))))
    return out


def verify_static_identity(params: PotentialParams, state, quad: QuadratureConfig, sample_set,
                           source: StaticSource | None = None) -> ResidualReport:
    """max |e^{-ip^2 t} phi + Born[I_exact] - e^{i kappa^2 t} phi| over the samples."""
    if source is None:
        # Gauss-Legendre nodes: enough for exp(i p3 s) over the support, plus a
        # margin that grows with the requested number of digits
        P = min(10.0 * state.packet.sigma3, state.p3_max)
        digits = max(0.0, -math.log10(quad.abs_tol))
        n = int(P * (params.R + params.w) + 20 + 6 * digits)
        source = StaticSource(state, n)
    line = StraightLine()
    res = []
    for p, t in sample_set:
        p = np.asarray(p, float)
        phi = float(state.phi(p))
        k2 = float(np.nan_to_num(state.kappa_sq_array(p[2])))
        exact = np.exp(1j * k2 * t) * phi
        rhs = np.exp(-1j * float(p @ p) * t) * phi
        if t > 0:
            rhs += born_delta_psi(p, t, source, line, params, quad, method="adaptive")
        res.append(abs(rhs - exact))
    return ResidualReport(tuple((tuple(map(float, p)), float(t)) for p, t in sample_set), tuple(res),
                          float(max(res)), float(max(quad.abs_tol, quad.rel_tol)))


__all__ = [
    "R2_GATE", "Q_MAX", "PowerFit", "fit_power_law", "TailFitResult", "TailPipeline", "tail_scan",
    "position_exponent", "DomainQSpec", "direction_grid", "estimate_domain_q", "ResidualReport",
    "StaticSource", "static_sample_set", "verify_static_identity",
]
