"""Source field on an (s, t) lattice, Picard corrections, and the scattered wave.

Conventions: m = 1/2 and hbar = 1, so free evolution is exp(-i p^2 t); plane
waves are exp(i p.x) and the inverse Fourier transform carries (2 pi)^-3.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import BudgetExceeded, DivergenceWarning
from .oscquad import QuadratureConfig, I0_eval, gauss_legendre, kernel_K, oscillatory_1d
from .potential import PotentialParams, chi, form_factor
from .spectral import I0_on_grid, filon_weights, lagrange6


# ---------------------------------------------------------------------------
# grid


def _aligned_step(limit: float, unit: float) -> float:
    """Largest step <= limit that divides ``unit``."""
    return unit / math.ceil(unit / limit * (1.0 - 1e-12))


@dataclass(frozen=True)
class GridSpec:
    """Lattice request.  Steps default to the quarter-wavelength limits.

    The default time step divides 0.01 so round times land on nodes.
    """

    T: float
    ds: float | None = None
    dt: float | None = None

    def nodes(self, params: PotentialParams):
        ds_max = math.pi * params.a / 4.0
        dt_max = math.pi * params.a**2 / 4.0
        ds = ds_max if self.ds is None else self.ds
        dt = _aligned_step(dt_max, 0.01) if self.dt is None else self.dt
        if ds > ds_max * (1 + 1e-12) or dt > dt_max * (1 + 1e-12):
            raise ValueError(f"grid too coarse: need ds <= {ds_max:.4g}, dt <= {dt_max:.4g}")
        lo, hi = params.support
        ns = int(math.ceil((hi - lo) / ds * (1.0 - 1e-12))) + 1
        nt = int(math.ceil(self.T / dt * (1.0 - 1e-9))) + 1
        return np.linspace(lo, hi, ns), dt * np.arange(nt)


@dataclass
class FieldGrid:
    s_nodes: np.ndarray
    t_nodes: np.ndarray
    values: np.ndarray
    meta: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        self.s_nodes = np.asarray(self.s_nodes, float)
        self.t_nodes = np.asarray(self.t_nodes, float)
        if self.values.shape != (len(self.s_nodes), len(self.t_nodes)):
            raise ValueError("values must have shape (len(s_nodes), len(t_nodes))")

    @property
    def ds(self) -> float:
        return float(self.s_nodes[1] - self.s_nodes[0])

    @property
    def dt(self) -> float:
        return float(self.t_nodes[1] - self.t_nodes[0])

    @property
    def T(self) -> float:
        return float(self.t_nodes[-1])

    def check_spacing(self, a: float) -> None:
        if self.ds > math.pi * a / 4.0 * (1 + 1e-12) or self.dt > math.pi * a * a / 4.0 * (1 + 1e-12):
            raise ValueError("grid spacing violates the quarter-wavelength limit")

    def with_values(self, values, **meta) -> "FieldGrid":
        return FieldGrid(self.s_nodes, self.t_nodes, values, {**self.meta, **meta})

    def __call__(self, s, t):
        """Bilinear interpolation; zero outside the s range."""
        s, t = np.broadcast_arrays(np.asarray(s, float), np.asarray(t, float))
        us = (s - self.s_nodes[0]) / self.ds
        ut = (t - self.t_nodes[0]) / self.dt
        i = np.clip(np.floor(us).astype(np.int64), 0, len(self.s_nodes) - 2)
        n = np.clip(np.floor(ut).astype(np.int64), 0, len(self.t_nodes) - 2)
        fs = us - i
        ft = ut - n
        v = self.values
        out = ((1 - fs) * (1 - ft) * v[i, n] + fs * (1 - ft) * v[i + 1, n]
               + (1 - fs) * ft * v[i, n + 1] + fs * ft * v[i + 1, n + 1])
        inside = (us >= -1e-9) & (us <= len(self.s_nodes) - 1 + 1e-9)
        return np.where(inside, out, 0.0)


@dataclass(frozen=True)
class BornConfig:
    order: int = 0
    T: float = 1.0

    def __post_init__(self):
        if not 0 <= self.order <= 4:
            raise ValueError("order must be in 0..4")
        if not self.T > 0:
            raise ValueError("T must be positive")


# ---------------------------------------------------------------------------
# I0 on the grid


def compute_I0_grid(curve, state, params: PotentialParams, grid_spec: GridSpec,
                    quad: QuadratureConfig = QuadratureConfig(), method: str = "spectral",
                    threads: int = 1) -> FieldGrid:
    """I0 at every lattice node.

    ``method="direct"`` calls I0_eval per node.  ``method="spectral"`` uses the
    FFT-in-energy evaluator, which is far cheaper at small a and agrees with
    the direct route to ~1e-5 relative (dominated by the energy step).
    """
    s_nodes, t_nodes = grid_spec.nodes(params)
    if method == "spectral":
        vals = I0_on_grid(curve, state, s_nodes, t_nodes)
    elif method == "direct":
        pts = [(s, t) for s in s_nodes for t in t_nodes]

        def one(st):
            return I0_eval(st[0], st[1], curve, state, params, quad)

        if threads > 1:
            with ThreadPoolExecutor(threads) as ex:
                flat = list(ex.map(one, pts))
        else:
            flat = [one(p) for p in pts]
        vals = np.array(flat, complex).reshape(len(s_nodes), len(t_nodes))
    else:
        raise ValueError(f"unknown method {method!r}")
    return FieldGrid(s_nodes, t_nodes, vals, {"method": method})


# ---------------------------------------------------------------------------
# Picard iteration


class KernelTable:
    """K(tau_k, d) for tau_k = k dt on a uniform d grid, 6-point interpolation in d."""

    def __init__(self, a: float, dt: float, n_tau: int, d_max: float, quad: QuadratureConfig,
                 dd: float | None = None):
        self.a = a
        self.dd = a / 16.0 if dd is None else dd
        self.n_d = int(math.ceil(d_max / self.dd)) + 6
        d = self.dd * np.arange(self.n_d)
        self.values = np.array(
            [[kernel_K(k * dt, float(x), a, quad) for x in d] for k in range(n_tau)], complex
        )

    def __call__(self, k: int, d):
        idx, w = lagrange6(self.dd, self.n_d, d)
        return np.sum(self.values[k][idx] * w, axis=-1)


def volterra_iterate(field: FieldGrid, curve, params: PotentialParams, order: int,
                     quad: QuadratureConfig = QuadratureConfig(),
                     kernel: KernelTable | None = None) -> FieldGrid:
    """Picard iterates of the source equation, trapezoid in s' and t'.

    Returns I^(order); ``meta["picard_diffs"]`` holds sup|I^(k+1) - I^(k)|.
    """
    if order < 0:
        raise ValueError("order must be non-negative")
    if order == 0:
        return field.with_values(field.values.copy(), picard_diffs=[])
    s, t = field.s_nodes, field.t_nodes
    ns, nt = len(s), len(t)
    X = curve.position(s[:, None], t[None, :])  # (ns, nt, 3)
    if kernel is None:
        span = np.ptp(X.reshape(-1, 3), axis=0)
        kernel = KernelTable(params.a, field.dt, nt, float(np.linalg.norm(span)) + params.a, quad)
    ws = np.full(ns, field.ds) * form_factor(s, params.R, params.w)
    ws[0] *= 0.5
    ws[-1] *= 0.5
    # K blocks for every (t_n, t_m <= t_n): K[n][m] has shape (ns, ns)
    Kb = {}
    for n in range(nt):
        for m in range(n + 1):
            d = np.linalg.norm(X[:, n, None, :] - X[None, :, m, :], axis=-1)
            Kb[n, m] = kernel(n - m, d)
    I0 = field.values
    cur = I0.copy()
    diffs = []
    for _ in range(order):
        nxt = I0.copy()
        for n in range(1, nt):
            acc = np.zeros(ns, complex)
            for m in range(n + 1):
                wt = field.dt * (0.5 if m in (0, n) else 1.0)
                acc += wt * (Kb[n, m] @ (ws * cur[:, m]))
            nxt[:, n] -= params.eps_a * acc
        diffs.append(float(np.max(np.abs(nxt - cur))))
        cur = nxt
    if any(d1 >= d0 for d0, d1 in zip(diffs, diffs[1:])):
        warnings.warn(f"Picard differences not decreasing: {diffs}", DivergenceWarning)
    return field.with_values(cur, picard_diffs=diffs)


# ---------------------------------------------------------------------------
# scattered wave in momentum space


def _born_adaptive(p, t, field, curve, params, quad):
    """Nested adaptive quadrature for an arbitrary callable I(s, t).

    ``field.s_rate`` / ``field.t_rate`` (if present) bound the phase rates of I.
    """
    p2 = float(p @ p)
    s_rate = float(getattr(field, "s_rate", 0.0))
    t_rate = float(getattr(field, "t_rate", 0.0))
    lo, hi = params.support

    def inner(tp):
        def amp(s):
            return form_factor(s, params.R, params.w) * field(s, tp)

        return oscillatory_1d(
            amp, lambda s: -(curve.position(s, tp) @ p),
            lambda s: np.abs(curve.tangent(s, tp) @ p) + s_rate,
            (lo, hi), quad, where={"t'": float(tp)},
        )

    def outer(tp):
        return np.array([inner(x) for x in np.atleast_1d(tp)], complex)

    val = oscillatory_1d(outer, lambda x: p2 * x, lambda x: np.full_like(x, p2 + t_rate),
                         (0.0, t), quad, where={"p": p.tolist(), "t": t})
    return np.exp(-1j * p2 * t) * val


def _born_cells(p, t, field: FieldGrid, curve, params, order: int = 4):
    """Exact integral of the bilinear interpolant: Gauss-Legendre inside each lattice cell."""
    p2 = float(p @ p)
    xg, wg = gauss_legendre(order)
    k_end = int(math.floor(t / field.dt + 1e-9))
    t_edges = list(field.t_nodes[:k_end + 1])
    if t - t_edges[-1] > 1e-12 * max(1.0, t):
        t_edges.append(t)
    t_edges = np.array(t_edges)
    s = field.s_nodes
    sl, sr = s[:-1], s[1:]
    s_q = (0.5 * (sl + sr)[:, None] + 0.5 * field.ds * xg[None, :]).ravel()
    ws_q = (0.5 * field.ds * wg[None, :] * np.ones((len(sl), 1))).ravel()
    ws_q = ws_q * form_factor(s_q, params.R, params.w)
    total = 0j
    for a, b in zip(t_edges[:-1], t_edges[1:]):
        tq = 0.5 * (a + b) + 0.5 * (b - a) * xg
        wt = 0.5 * (b - a) * wg
        x = curve.position(s_q[:, None], tq[None, :])
        Iv = field(s_q[:, None], tq[None, :])
        inner = np.sum(ws_q[:, None] * np.exp(-1j * (x @ p)) * Iv, axis=0)
        total += np.sum(wt * np.exp(1j * p2 * tq) * inner)
    return np.exp(-1j * p2 * t) * total


def born_source_series(p, k: int, field: FieldGrid, curve, params, t_chunk: int = 512):
    """F_p(t_n) = int ds' g(s') exp(-i p.x(s',t_n)) I(s',t_n) for n <= k, trapezoid in s'."""
    s = field.s_nodes
    g = field.ds * form_factor(s, params.R, params.w)
    g[0] *= 0.5
    g[-1] *= 0.5
    out = np.empty(k + 1, complex)
    for n0 in range(0, k + 1, t_chunk):
        n1 = min(k + 1, n0 + t_chunk)
        x = curve.position(s[:, None], field.t_nodes[None, n0:n1])
        out[n0:n1] = np.sum(g[:, None] * np.exp(-1j * (x @ p)) * field.values[:, n0:n1], axis=0)
    return out


def _born_filon(p, t, field: FieldGrid, curve, params):
    """Node values only: trapezoid in s', cubic Filon against exp(i p^2 t') in t'."""
    k = int(round(t / field.dt))
    if abs(k * field.dt - t) > 1e-9 * max(1.0, t):
        raise ValueError("the Filon route needs t on a lattice node")
    p2 = float(p @ p)
    F = born_source_series(p, k, field, curve, params)
    W = filon_weights(k + 1, field.dt, p2)
    return np.exp(-1j * p2 * t) * np.sum(W * F)


def born_delta_psi_batch(P, t: float, field: FieldGrid, curve, params: PotentialParams,
                         p_chunk: int = 64) -> np.ndarray:
    """Filon route for many momenta at once (rows of P), sharing the lattice geometry."""
    P = np.atleast_2d(np.asarray(P, float))
    k = int(round(t / field.dt))
    if abs(k * field.dt - t) > 1e-9 * max(1.0, t):
        raise ValueError("the Filon route needs t on a lattice node")
    s = field.s_nodes
    g = field.ds * form_factor(s, params.R, params.w)
    g[0] *= 0.5
    g[-1] *= 0.5
    F = np.zeros((len(P), k + 1), complex)
    for n in range(k + 1):
        x = curve.position(s, field.t_nodes[n])
        src = g * field.values[:, n]
        for j0 in range(0, len(P), p_chunk):
            E = np.exp(-1j * (P[j0:j0 + p_chunk] @ x.T))
            F[j0:j0 + p_chunk, n] = E @ src
    out = np.zeros(len(P), complex)
    for j, p in enumerate(P):
        if chi(p, params.a) == 0:
            continue
        p2 = float(p @ p)
        out[j] = -1j * params.eps_a * np.exp(-1j * p2 * t) * np.sum(filon_weights(k + 1, field.dt, p2) * F[j])
    return out


def born_delta_psi(p, t: float, field, curve, params: PotentialParams,
                   quad: QuadratureConfig = QuadratureConfig(), method: str = "auto") -> complex:
    """Born term -i eps chi(p) int_0^t dt' e^{-ip^2(t-t')} int ds' g e^{-ip.x} I.

    method: "adaptive" (any callable field), "cells" (FieldGrid, integrates the
    bilinear interpolant cell by cell), "filon" (FieldGrid, node values only,
    t on a node).  "auto" picks "cells" for a FieldGrid and "adaptive" otherwise.
    """
    p = np.asarray(p, float)
    if t < 0:
        raise ValueError("t must be non-negative")
    if t == 0 or chi(p, params.a) == 0:
        return 0j
    if isinstance(field, FieldGrid) and t > field.T * (1 + 1e-12):
        raise ValueError("field does not cover [0, t]")
    if method == "auto":
        method = "cells" if isinstance(field, FieldGrid) else "adaptive"
    if method == "adaptive":
        val = _born_adaptive(p, t, field, curve, params, quad)
    elif method == "cells":
        val = _born_cells(p, t, field, curve, params)
    elif method == "filon":
        val = _born_filon(p, t, field, curve, params)
    else:
        raise ValueError(f"unknown method {method!r}")
    return complex(-1j * params.eps_a * val)


@dataclass(frozen=True)
class PsiSample:
    psi: complex
    psi0: complex
    delta_free: complex
    delta_born: complex

    @property
    def delta(self) -> complex:
        return self.delta_free + self.delta_born


def psi(p, t: float, state, field, curve, params: PotentialParams,
        quad: QuadratureConfig = QuadratureConfig(), method: str = "auto") -> PsiSample:
    """psi(p,t) = e^{-ip^2 t} phi(p) + Born term, with the split against psi(p,0) = phi(p)."""
    p = np.asarray(p, float)
    phi = float(state.phi(p))
    born = born_delta_psi(p, t, field, curve, params, quad, method)
    free = np.exp(-1j * float(p @ p) * t) * phi
    return PsiSample(complex(free + born), complex(phi), complex(free - phi), born)


def free_norm(state, t: float, quad: QuadratureConfig = QuadratureConfig(), n_rho: int = 64) -> float:
    """(2 pi)^-3 int |e^{-ip^2 t} phi|^2 d^3p, integrating the evolved amplitude itself."""
    P = min(1.0 / state.a, state.p3_max)
    xg, wg = gauss_legendre(n_rho)

    def amp(p3):
        rho_max = np.sqrt(np.maximum(1.0 / state.a**2 - p3**2, 0.0))
        rho = 0.5 * rho_max[:, None] * (xg[None, :] + 1.0)
        pts = np.stack(np.broadcast_arrays(rho, 0.0 * rho, p3[:, None]), axis=-1)
        evolved = np.exp(-1j * (rho**2 + p3[:, None] ** 2) * t) * state.phi(pts)
        return 2.0 * math.pi * np.sum(0.5 * rho_max[:, None] * wg * rho * np.abs(evolved) ** 2, axis=1)

    sig = state.packet.sigma3
    val = oscillatory_1d(amp, None, lambda x: np.full_like(x, 1.0 / sig), (-P, P), quad)
    return float(np.real(val)) / (2.0 * math.pi) ** 3


# ---------------------------------------------------------------------------
# position space


@dataclass(frozen=True)
class ProbeConfig:
    n_radial: int = 48
    n_polar: int = 24
    n_azimuth: int = 32
    max_nodes: int = 200_000

    @property
    def n_nodes(self) -> int:
        return self.n_radial * self.n_polar * self.n_azimuth


def spherical_grid(a: float, cfg: ProbeConfig):
    """Nodes and weights of a product rule on the ball |p| < 1/a."""
    if cfg.n_nodes > cfg.max_nodes:
        raise BudgetExceeded(f"probe needs {cfg.n_nodes} nodes, budget is {cfg.max_nodes}")
    P = 1.0 / a
    xr, wr = gauss_legendre(cfg.n_radial)
    r = 0.5 * P * (xr + 1.0)
    wr = 0.5 * P * wr * r * r
    ct, wc = gauss_legendre(cfg.n_polar)
    ph = 2.0 * math.pi * np.arange(cfg.n_azimuth) / cfg.n_azimuth
    wp = 2.0 * math.pi / cfg.n_azimuth
    st = np.sqrt(1.0 - ct * ct)
    dirs = np.stack(np.broadcast_arrays(st[:, None] * np.cos(ph)[None, :],
                                        st[:, None] * np.sin(ph)[None, :],
                                        ct[:, None] * np.ones_like(ph)[None, :]), axis=-1)
    pts = r[:, None, None, None] * dirs[None]
    w = wr[:, None, None] * wc[None, :, None] * wp * np.ones(len(ph))[None, None, :]
    return pts.reshape(-1, 3), w.ravel()


def sample_delta_psi(t: float, state, field, curve, params: PotentialParams, cfg: ProbeConfig,
                     quad: QuadratureConfig = QuadratureConfig(), method: str = "auto"):
    """delta psi on the probe grid; the expensive part, reused across probe points."""
    pts, w = spherical_grid(params.a, cfg)
    if method == "filon":
        free = (np.exp(-1j * np.sum(pts * pts, axis=-1) * t) - 1.0) * state.phi(pts)
        vals = free + born_delta_psi_batch(pts, t, field, curve, params)
    else:
        vals = np.array([psi(p, t, state, field, curve, params, quad, method).delta for p in pts])
    return pts, w, vals


def position_probe(x, t: float, samples) -> complex:
    """(2 pi)^-3 int_{|p|<1/a} delta psi(p,t) e^{ip.x} d^3p from ``sample_delta_psi`` output."""
    if not t > 0:
        raise ValueError("t must be positive")
    pts, w, vals = samples
    x = np.asarray(x, float)
    return complex(np.sum(w * vals * np.exp(1j * (pts @ x))) / (2.0 * math.pi) ** 3)


__all__ = [
    "GridSpec", "FieldGrid", "BornConfig", "KernelTable", "compute_I0_grid", "volterra_iterate",
    "born_source_series", "born_delta_psi_batch", "born_delta_psi", "PsiSample", "psi", "free_norm", "ProbeConfig",
    "spherical_grid", "sample_delta_psi", "position_probe",
]
