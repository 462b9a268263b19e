"""Moving infinite curves x(s, t), their tangents, and cusp search.

Three curve families are provided:

* :class:`StraightLine`   -- the static string x = s n3.
* :class:`SyntheticCusp`  -- a kinematic family with exactly one cusp at (0, t1).
* :class:`MoverCurve`     -- a gauge-exact Nambu-Goto string built from
  left/right unit-speed movers, x = (A(s+t) + B(s-t)) / 2.

All evaluators are vectorised: ``s`` and ``t`` broadcast against each other and
positions/tangents come back with a trailing axis of length 3.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize
from scipy.interpolate import CubicHermiteSpline

from .errors import DegenerateCurve

N3 = np.array([0.0, 0.0, 1.0])


class _Degenerate:
    """Sentinel returned by :func:`critical_point_scan` when u.x' == 0 identically."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "DEGENERATE"

    def __bool__(self) -> bool:
        return False


DEGENERATE = _Degenerate()


def _stack(*comps):
    comps = np.broadcast_arrays(*comps)
    return np.stack(comps, axis=-1)


@dataclass(frozen=True)
class StraightLine:
    name = "straight"

    def position(self, s, t):
        s, t = np.broadcast_arrays(np.asarray(s, float), np.asarray(t, float))
        z = np.zeros_like(s)
        return _stack(z, z, s)

    def tangent(self, s, t):
        s, t = np.broadcast_arrays(np.asarray(s, float), np.asarray(t, float))
        z = np.zeros_like(s)
        return _stack(z, z, z + 1.0)

    def tangent_jacobian(self, s, t):
        """(d/ds x', d/dt x')."""
        s, t = np.broadcast_arrays(np.asarray(s, float), np.asarray(t, float))
        z = np.zeros_like(s)
        zero = _stack(z, z, z)
        return zero, zero

    def velocity(self, s, t):
        s, t = np.broadcast_arrays(np.asarray(s, float), np.asarray(t, float))
        z = np.zeros_like(s)
        return _stack(z, z, z)


@dataclass(frozen=True)
class SyntheticCusp:
    """x(s,t) = (A1 mu e^{-s^2}, 0, s - mu s e^{-s^2}),  mu = exp(-(t-t1)^2/sigma_t^2).

    The tangent vanishes only at (s, t) = (0, t1).  ``t1 >= 10 sigma_t`` keeps the
    curve straight to machine precision at t = 0.
    """

    t1: float = 1.0
    sigma_t: float = 0.1
    A1: float = 0.5
    name = "synthetic-cusp"

    def __post_init__(self):
        if not self.sigma_t > 0:
            raise ValueError("sigma_t must be positive")
        if self.A1 == 0:
            raise ValueError("A1 must be nonzero")
        if self.t1 < 10.0 * self.sigma_t:
            raise ValueError("t1 must be at least 10*sigma_t (straight at t=0)")

    def mu(self, t):
        return np.exp(-(((np.asarray(t, float) - self.t1) / self.sigma_t) ** 2))

    def mu_dot(self, t):
        t = np.asarray(t, float)
        return -2.0 * (t - self.t1) / self.sigma_t**2 * self.mu(t)

    def position(self, s, t):
        s, t = np.broadcast_arrays(np.asarray(s, float), np.asarray(t, float))
        bump = self.mu(t) * np.exp(-s * s)
        return _stack(self.A1 * bump, np.zeros_like(s), s - s * bump)

    def tangent(self, s, t):
        s, t = np.broadcast_arrays(np.asarray(s, float), np.asarray(t, float))
        bump = self.mu(t) * np.exp(-s * s)
        return _stack(
            -2.0 * self.A1 * s * bump,
            np.zeros_like(s),
            1.0 - (1.0 - 2.0 * s * s) * bump,
        )

    def tangent_jacobian(self, s, t):
        s, t = np.broadcast_arrays(np.asarray(s, float), np.asarray(t, float))
        g = np.exp(-s * s)
        mu, mud = self.mu(t), self.mu_dot(t)
        z = np.zeros_like(s)
        d_s = _stack(
            -2.0 * self.A1 * mu * (1.0 - 2.0 * s * s) * g,
            z,
            mu * g * (6.0 * s - 4.0 * s**3),
        )
        d_t = _stack(-2.0 * self.A1 * mud * s * g, z, -mud * (1.0 - 2.0 * s * s) * g)
        return d_s, d_t

    def velocity(self, s, t):
        s, t = np.broadcast_arrays(np.asarray(s, float), np.asarray(t, float))
        g = np.exp(-s * s) * self.mu_dot(t)
        return _stack(self.A1 * g, np.zeros_like(s), -s * g)


@dataclass(frozen=True)
class MoverPath:
    """Unit-vector path n3 -> tilted -> n3 on the sphere.

    The polar angle follows a Gaussian bump theta(u) = theta_max exp(-((u-u0)/width)^2)
    at fixed azimuth phi, so |A'(u)| = 1 holds exactly up to rounding.
    """

    theta_max: float = 0.0
    u0: float = 0.0
    width: float = 1.0
    phi: float = 0.0

    def theta(self, u):
        return self.theta_max * np.exp(-(((np.asarray(u, float) - self.u0) / self.width) ** 2))

    def theta_prime(self, u):
        u = np.asarray(u, float)
        return -2.0 * (u - self.u0) / self.width**2 * self.theta(u)

    def direction(self, u):
        th = self.theta(u)
        sth = np.sin(th)
        return _stack(sth * math.cos(self.phi), sth * math.sin(self.phi), np.cos(th))

    def direction_prime(self, u):
        th = self.theta(u)
        thp = self.theta_prime(u)
        return _stack(
            thp * np.cos(th) * math.cos(self.phi),
            thp * np.cos(th) * math.sin(self.phi),
            -thp * np.sin(th),
        )

    def support(self) -> tuple[float, float]:
        # theta < theta_max * e^-100 outside this window
        return self.u0 - 10.0 * self.width, self.u0 + 10.0 * self.width


class _MoverIntegral:
    """Cached A(u) = integral_0^u A'(v) dv, Hermite-spline interpolated."""

    _GL_X, _GL_W = np.polynomial.legendre.leggauss(8)

    def __init__(self, path: MoverPath, nodes_per_width: int = 250):
        self.path = path
        self.trivial = path.theta_max == 0.0
        if self.trivial:
            return
        lo, hi = path.support()
        n = int(math.ceil((hi - lo) / path.width * nodes_per_width))
        u = np.linspace(lo, hi, n + 1)
        # cell integrals of A' - n3 by 8-point Gauss-Legendre
        mid = 0.5 * (u[1:] + u[:-1])
        half = 0.5 * (u[1:] - u[:-1])
        pts = mid[:, None] + half[:, None] * self._GL_X[None, :]
        dev = path.direction(pts) - N3
        cells = half[:, None] * np.einsum("k,nkc->nc", self._GL_W, dev)
        cum = np.vstack([np.zeros(3), np.cumsum(cells, axis=0)])
        self.lo, self.hi = lo, hi
        self.tail = cum[-1]
        self.spline = CubicHermiteSpline(u, cum, path.direction(u) - N3, axis=0)
        self.offset = self._excess(np.array(0.0))

    def _excess(self, u):
        u = np.asarray(u, float)
        out = self.spline(np.clip(u, self.lo, self.hi))
        out = np.where((u > self.hi)[..., None], self.tail, out)
        out = np.where((u < self.lo)[..., None], 0.0, out)
        return out

    def __call__(self, u):
        u = np.asarray(u, float)
        base = u[..., None] * N3
        if self.trivial:
            return base
        return base + self._excess(u) - self.offset


@dataclass(frozen=True)
class MoverCurve:
    """Nambu-Goto string in conformal gauge, x = (A(s+t) + B(s-t)) / 2."""

    A: MoverPath = field(default_factory=MoverPath)
    B: MoverPath = field(default_factory=MoverPath)
    name = "mover"

    def __post_init__(self):
        object.__setattr__(self, "_A_int", _MoverIntegral(self.A))
        object.__setattr__(self, "_B_int", _MoverIntegral(self.B))

    def position(self, s, t):
        s, t = np.broadcast_arrays(np.asarray(s, float), np.asarray(t, float))
        return 0.5 * (self._A_int(s + t) + self._B_int(s - t))

    def tangent(self, s, t):
        s, t = np.broadcast_arrays(np.asarray(s, float), np.asarray(t, float))
        return 0.5 * (self.A.direction(s + t) + self.B.direction(s - t))

    def tangent_jacobian(self, s, t):
        s, t = np.broadcast_arrays(np.asarray(s, float), np.asarray(t, float))
        ap = self.A.direction_prime(s + t)
        bp = self.B.direction_prime(s - t)
        return 0.5 * (ap + bp), 0.5 * (ap - bp)

    def velocity(self, s, t):
        s, t = np.broadcast_arrays(np.asarray(s, float), np.asarray(t, float))
        return 0.5 * (self.A.direction(s + t) - self.B.direction(s - t))


CurveFamily = StraightLine | SyntheticCusp | MoverCurve


def eval_position(curve: CurveFamily, s, t) -> np.ndarray:
    return curve.position(s, t)


def eval_tangent(curve: CurveFamily, s, t) -> np.ndarray:
    return curve.tangent(s, t)


def asymptotic_deviation(curve: CurveFamily, t: float, n: int, s_list: Sequence[float]) -> np.ndarray:
    """s^n |x(s,t) - n3 s| for every s in ``s_list``."""
    if n < 0:
        raise ValueError("n must be non-negative")
    s = np.asarray(s_list, float)
    dev = curve.position(s, t) - s[..., None] * N3
    return np.abs(s) ** n * np.linalg.norm(dev, axis=-1)


# ---------------------------------------------------------------------------
# cusp search


@dataclass(frozen=True)
class CuspEvent:
    s1: float
    t1: float
    location: np.ndarray
    tangent_residual: float
    isolated: bool = True

    def as_row(self) -> tuple:
        x = self.location
        return (self.s1, self.t1, x[0], x[1], x[2], self.tangent_residual)


def _residual(curve, s, t) -> float:
    return float(np.linalg.norm(curve.tangent(s, t)))


def _refine(curve, s, t, tol, fix_t=False, max_iter=200):
    """Damped Gauss-Newton on the tangent components.

    Near a cusp the tangent is quadratic in one direction, so convergence there
    is linear; iteration continues past ``tol`` until steps stall.
    """
    lam = 1e-12
    r = _residual(curve, s, t)
    for _ in range(max_iter):
        f = curve.tangent(s, t)
        ds, dt = curve.tangent_jacobian(s, t)
        J = ds[:, None] if fix_t else np.stack([ds, dt], axis=1)
        JTJ = J.T @ J
        g = J.T @ f
        scale = np.trace(JTJ) / JTJ.shape[0] + 1e-300
        step = -np.linalg.solve(JTJ + lam * scale * np.eye(JTJ.shape[0]), g)
        # backtracking: halve until the residual does not grow
        accepted = False
        for _ in range(40):
            s_new = s + step[0]
            t_new = t if fix_t else t + step[1]
            r_new = _residual(curve, s_new, t_new)
            if r_new <= r:
                accepted = True
                break
            step = 0.5 * step
        if not accepted:
            break
        s, t, r = s_new, t_new, r_new
        if np.max(np.abs(step)) < 1e-14 or r < 1e-300:
            break
    return float(s), float(t), r


def _is_isolated(curve, s, t, tol, probe=1e-3):
    # a neighbouring time slice with its own zero nearby means a cusp locus
    for dt in (-probe, probe):
        s2, t2, r2 = _refine(curve, s, t + dt, tol, fix_t=True)
        if r2 < tol and abs(s2 - s) < 10.0 * probe:
            return False
    return True


def find_cusps(
    curve: CurveFamily,
    s_window: tuple[float, float],
    t_window: tuple[float, float],
    grid: tuple[int, int] = (241, 201),
    tol: float = 1e-10,
) -> list[CuspEvent]:
    """All zeros of |x'| inside the window, sorted by t then s.

    Candidates are local minima of |x'| on a (s, t) grid; each is refined by damped
    Gauss-Newton.  Zeros lying on a curve of cusps (non-isolated) are reported
    once per grid time row with ``isolated=False``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    s_grid = np.linspace(*s_window, grid[0])
    t_grid = np.linspace(*t_window, grid[1])
    S, T = np.meshgrid(s_grid, t_grid, indexing="ij")
    mag = np.linalg.norm(curve.tangent(S, T), axis=-1)
    if np.mean(mag < 1e-12) > 0.05:
        raise DegenerateCurve("tangent vanishes on a positive-measure part of the grid")

    padded = np.pad(mag, 1, constant_values=np.inf)
    is_min = np.ones_like(mag, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            nb = padded[1 + di : 1 + di + mag.shape[0], 1 + dj : 1 + dj + mag.shape[1]]
            is_min &= mag <= nb
    # a true zero can hide between nodes; be generous with the candidate threshold
    thresh = 0.25 * float(np.median(mag)) + 1e-300
    cand = np.argwhere(is_min & (mag < thresh))

    events: list[CuspEvent] = []

    def add(s, t, isolated):
        if not (s_window[0] - 1e-9 <= s <= s_window[1] + 1e-9):
            return
        if not (t_window[0] - 1e-9 <= t <= t_window[1] + 1e-9):
            return
        r = _residual(curve, s, t)
        if r >= tol:
            return
        for ev in events:
            if abs(ev.s1 - s) < 1e-6 and abs(ev.t1 - t) < 1e-6:
                return
        x = curve.position(s, t)
        events.append(CuspEvent(s, t, np.asarray(x, float), r, isolated))

    for i, j in cand:
        s, t, r = _refine(curve, S[i, j], T[i, j], tol)
        if r >= tol:
            continue
        if _is_isolated(curve, s, t, tol):
            add(s, t, True)
        else:
            # cusp locus: one event per grid time
            s_row, t_row, r_row = _refine(curve, S[i, j], T[i, j], tol, fix_t=True)
            if r_row < tol:
                add(s_row, t_row, False)
    events.sort(key=lambda e: (e.t1, e.s1))
    return events


def critical_point_scan(
    curve: CurveFamily,
    u,
    t: float,
    s_range: tuple[float, float],
    n: int = 4001,
    tol: float = 1e-10,
):
    """Zeros of s -> u . x'(s, t), or :data:`DEGENERATE` if it vanishes identically.

    Sign changes are refined by Brent bisection; touching (even-order) zeros are
    picked up from local minima of |u . x'| and refined by bounded minimisation.
    """
    u = np.asarray(u, float)
    if abs(np.linalg.norm(u) - 1.0) > 1e-9:
        raise ValueError("direction must be a unit vector")
    s = np.linspace(*s_range, n)

    def f(x):
        return float(curve.tangent(x, t) @ u)

    vals = curve.tangent(s, t) @ u
    if np.max(np.abs(vals)) < 1e-14:
        return DEGENERATE
    roots: list[float] = []
    for k in np.flatnonzero(vals == 0.0):
        roots.append(float(s[k]))
    for k in np.flatnonzero(vals[:-1] * vals[1:] < 0):
        roots.append(optimize.brentq(f, s[k], s[k + 1], xtol=1e-14))
    a = np.abs(vals)
    # a touching zero between nodes leaves a dip of at most 1/9 of the larger
    # neighbour (quadratic case); flat stretches are not candidates
    mid, lo, hi = a[1:-1], a[:-2], a[2:]
    dip = (mid <= lo) & (mid <= hi) & (mid > 0) & (mid <= 0.25 * np.maximum(lo, hi))
    dip &= vals[:-2] * vals[2:] > 0
    for k in np.flatnonzero(dip) + 1:
            res = optimize.minimize_scalar(
                lambda x: abs(f(x)), bounds=(s[k - 1], s[k + 1]), method="bounded",
                options={"xatol": 1e-12},
            )
            if abs(f(res.x)) < tol:
                roots.append(float(res.x))
    roots.sort()
    dedup: list[float] = []
    for r in roots:
        if not dedup or abs(r - dedup[-1]) > 1e-8:
            dedup.append(r)
    return dedup
