"""Fast evaluation of the Born source field on uniform time grids.

For the cylindrical reduction of I0 the transverse integral, written in the
energy variable y = rho^2,

    Psi(r; p3, t) = 1/2 int_0^{rho_max(p3)^2} J0(r sqrt(y)) exp(-i y t) / (b^2(p3) + y) dy,

is a Fourier integral in y.  On a uniform time grid t_n = n dt it is evaluated
for all n at once by an FFT with piecewise-linear Filon weights, tabulated on
a radial grid and interpolated (6-point Lagrange).  The longitudinal p3
integral is a fixed composite Gauss-Legendre rule over the packet support.

``filon_weights`` supplies the matching time-direction rule (piecewise cubic
Filon) used when the field is integrated against exp(i lambda t).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .oscquad import gauss_legendre


# ---------------------------------------------------------------------------
# Filon moments


def _linear_moments(theta):
    """alpha = int_0^1 (1-u) e^{-i theta u} du,  beta = int_0^1 u e^{-i theta u} du."""
    theta = np.asarray(theta, float)
    small = np.abs(theta) < 1e-2
    th = np.where(small, 1.0, theta)
    e = np.exp(-1j * th)
    m0 = (1.0 - e) / (1j * th)
    beta = (e * (1.0 + 1j * th) - 1.0) / th**2
    alpha = m0 - beta
    # series: sum_k (-i theta)^k / k! * moments of (1-u) and u
    z = -1j * theta
    a_s = 0.5 + z / 6.0 + z**2 / 24.0 + z**3 / 120.0 + z**4 / 720.0 + z**5 / 5040.0
    b_s = 0.5 + z / 3.0 + z**2 / 8.0 + z**3 / 30.0 + z**4 / 144.0 + z**5 / 840.0
    return np.where(small, a_s, alpha), np.where(small, b_s, beta)


def fourier_filon_fft(f: np.ndarray, dy: float, dt: float, n_out: int, n_fft: int,
                      y_end: float | None = None, f_end: np.ndarray | None = None) -> np.ndarray:
    """F(t_n) = int_0^{y_end} f(y) exp(-i y t_n) dy for n < n_out, t_n = n dt.

    ``f`` holds samples at y_m = m dy (m = 0..M, rows along axis -1 = m).  The
    integrand is taken piecewise linear; ``y_end`` in [y_M, y_M + dy) adds the
    partial last cell using ``f_end`` = f(y_end).  Requires dy * dt = 2 pi / n_fft.
    """
    if abs(dy * dt * n_fft / (2.0 * math.pi) - 1.0) > 1e-12:
        raise ValueError("dy * dt must equal 2 pi / n_fft")
    M = f.shape[-1] - 1
    if M + 1 > n_fft:
        raise ValueError("sample count exceeds FFT length")
    if n_out > n_fft // 2:
        raise ValueError("too many output times for the FFT length")
    # real samples: the half spectrum is enough
    S = np.fft.rfft(f, n=n_fft, axis=-1)[..., :n_out]
    t = dt * np.arange(n_out)
    theta = t * dy
    W = np.where(np.abs(theta) < 1e-4, 1.0 - theta**2 / 12.0,
                 2.0 * (1.0 - np.cos(theta)) / np.where(theta == 0, 1.0, theta) ** 2)
    alpha, beta = _linear_moments(theta)
    y_M = M * dy
    out = W * S
    out = out + (alpha - W) * f[..., :1]
    out = out + (np.exp(1j * theta) * beta - W) * f[..., M:M + 1] * np.exp(-1j * y_M * t)
    out = dy * out
    if y_end is not None and y_end > y_M:
        h = y_end - y_M
        a2, b2 = _linear_moments(t * h)
        out = out + h * np.exp(-1j * y_M * t) * (a2 * f[..., M:M + 1] + b2 * f_end[..., None])
    return out


# ---------------------------------------------------------------------------
# cubic Filon rule in time


def _power_moments(theta, n=4):
    """M_j = int_0^1 u^j e^{i theta u} du for j < n."""
    theta = np.asarray(theta, float)
    out = np.empty((n,) + theta.shape, complex)
    small = np.abs(theta) < 0.5
    th = np.where(small, 1.0, theta)
    e = np.exp(1j * th)
    m = (e - 1.0) / (1j * th)
    big = [m]
    for j in range(1, n):
        m = (e - j * m) / (1j * th)
        big.append(m)
    z = 1j * theta
    for j in range(n):
        # sum_k z^k / (k! (j+k+1))
        term = np.ones_like(z)
        ser = term / (j + 1)
        for k in range(1, 30):
            term = term * z / k
            ser = ser + term / (j + k + 1)
        out[j] = np.where(small, ser, big[j])
    return out


def _lagrange_coeffs(offsets):
    """Monomial coefficients (in u) of the Lagrange basis on integer offsets."""
    offsets = np.asarray(offsets, float)
    C = np.empty((len(offsets), len(offsets)))
    for k, ok in enumerate(offsets):
        poly = np.poly1d([1.0])
        for m, om in enumerate(offsets):
            if m != k:
                poly = poly * np.poly1d([1.0, -om]) / (ok - om)
        c = poly.coeffs[::-1]
        C[k, :] = np.pad(c, (0, len(offsets) - len(c)))
    return C


_CUBIC_SETS = {
    "first": (np.array([0, 1, 2, 3]), 0),
    "inner": (np.array([-1, 0, 1, 2]), 1),
    "last": (np.array([-2, -1, 0, 1]), 2),
}


def filon_weights(n_nodes: int, dt: float, lam: float) -> np.ndarray:
    """Weights w_m with sum_m w_m F(t_m) ~= int_{t_0}^{t_{N}} exp(i lam (t - t_0)) F(t) dt.

    F is interpolated cell by cell with cubic Lagrange polynomials and the
    product with the exponential is integrated exactly.
    """
    if n_nodes < 2:
        return np.zeros(n_nodes, complex)
    n_cells = n_nodes - 1
    theta = lam * dt
    mom = _power_moments(np.array(theta), 4)  # shape (4,)
    w = np.zeros(n_nodes, complex)
    if n_nodes < 4:
        # linear Filon on very short grids
        a, b = _linear_moments(-theta)
        for n in range(n_cells):
            ph = np.exp(1j * lam * n * dt)
            w[n] += dt * ph * a
            w[n + 1] += dt * ph * b
        return w
    cell_w = {}
    for key, (offs, _) in _CUBIC_SETS.items():
        C = _lagrange_coeffs(offs)
        cell_w[key] = dt * (C @ mom)
    phase = np.exp(1j * lam * dt * np.arange(n_cells))
    # interior cells share one stencil: accumulate by shifted adds
    inner = cell_w["inner"]
    idx = np.arange(1, n_cells - 1)
    for k, off in enumerate(_CUBIC_SETS["inner"][0]):
        np.add.at(w, idx + off, phase[idx] * inner[k])
    for k, off in enumerate(_CUBIC_SETS["first"][0]):
        w[0 + off] += phase[0] * cell_w["first"][k]
    last = n_cells - 1
    for k, off in enumerate(_CUBIC_SETS["last"][0]):
        w[last + off] += phase[last] * cell_w["last"][k]
    return w


# ---------------------------------------------------------------------------
# radial tables and longitudinal rule


_L6_DENOM = np.array([-120.0, 24.0, -12.0, 12.0, -24.0, 120.0])


def lagrange6(x_grid_step: float, n_grid: int, x: np.ndarray):
    """Indices (..., 6) and weights (..., 6) for 6-point Lagrange interpolation on a uniform grid from 0."""
    u = np.asarray(x, float) / x_grid_step
    base = np.clip(np.floor(u).astype(np.int64) - 2, 0, n_grid - 6)
    idx = base[..., None] + np.arange(6)
    d = u[..., None] - idx  # distances to the six nodes
    # w_m = prod_{k != m} d_k / prod_{k != m} (m - k), via prefix and suffix products
    pre = np.ones(d.shape)
    suf = np.ones(d.shape)
    for m in range(1, 6):
        pre[..., m] = pre[..., m - 1] * d[..., m - 1]
        suf[..., 5 - m] = suf[..., 6 - m] * d[..., 6 - m]
    return idx, pre * suf / _L6_DENOM


@dataclass
class LongitudinalRule:
    """Nodes p3 > 0 and weights for 2 int_0^P C(p3) cos(p3 z) h(p3^2) dp3."""

    p3: np.ndarray
    weights: np.ndarray  # includes the factor 2 and C(p3)

    @classmethod
    def build(cls, state, z_max: float, t_max: float, n_sigma: float = 7.0,
              nodes_per_panel: int = 16) -> "LongitudinalRule":
        P = min(n_sigma * state.packet.sigma3, state.p3_max)
        # phase budget of cos(p3 z) exp(-i p3^2 t) over [0, P]; ~0.5 nodes per radian
        budget = z_max * P + P * P * t_max + 10.0
        n_pan = max(3, int(math.ceil(0.5 * budget / nodes_per_panel)))
        xg, wg = gauss_legendre(nodes_per_panel)
        edges = np.linspace(0.0, P, n_pan + 1)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        p3 = (mid[:, None] + half[:, None] * xg[None, :]).ravel()
        w = (half[:, None] * wg[None, :]).ravel()
        return cls(p3, 2.0 * w * state.packet_C(p3))


def psi_tables(state, r_grid: np.ndarray, p3: np.ndarray, dt: float, n_t: int,
               dy_max: float = 0.4, chunk_rows: int = 8):
    """Psi(r_i; p3_j, t_n) for all i, j and n < n_t, returned as array (j, i, n)."""
    a = state.a
    c = 1.0 / math.expm1(state.beta)
    n_fft = 1 << int(math.ceil(math.log2(2.0 * math.pi / (dt * dy_max))))
    dy = 2.0 * math.pi / (n_fft * dt)
    out = np.empty((len(p3), len(r_grid), n_t), complex)
    for j, q in enumerate(p3):
        y_end = 1.0 / a**2 - q * q
        b2 = c * y_end
        M = int(math.floor(y_end / dy))
        if M >= n_fft:
            raise ValueError("time step too coarse for the cutoff energy")
        y = dy * np.arange(M + 1)
        for i0 in range(0, len(r_grid), chunk_rows):
            r = r_grid[i0:i0 + chunk_rows]
            f = 0.5 * special.j0(r[:, None] * np.sqrt(y)[None, :]) / (b2 + y)[None, :]
            f_end = 0.5 * special.j0(r * math.sqrt(y_end)) / (b2 + y_end)
            out[j, i0:i0 + chunk_rows] = fourier_filon_fft(f, dy, dt, n_t, n_fft, y_end, f_end)
    return out


def I0_on_grid(curve, state, s_nodes: np.ndarray, t_nodes: np.ndarray, dr: float | None = None,
               dy_max: float = 0.4, t_chunk: int = 256, rule: LongitudinalRule | None = None,
               dtype=complex) -> np.ndarray:
    """I0 at every (s_i, t_n) of a uniform grid starting at t = 0.  Shape (Ns, Nt)."""
    s_nodes = np.asarray(s_nodes, float)
    t_nodes = np.asarray(t_nodes, float)
    n_t = len(t_nodes)
    dt = t_nodes[1] - t_nodes[0] if n_t > 1 else 1.0
    if abs(t_nodes[0]) > 1e-15 or (n_t > 1 and np.max(np.abs(np.diff(t_nodes) - dt)) > 1e-9 * dt):
        raise ValueError("time nodes must be uniform and start at 0")
    if dr is None:
        dr = 0.25 * state.a
    # cylindrical coordinates of every node, shared by all p3 fibres
    r_all = np.empty((len(s_nodes), n_t))
    z_all = np.empty((len(s_nodes), n_t))
    for n0 in range(0, n_t, t_chunk):
        x = curve.position(s_nodes[:, None], t_nodes[None, n0:n0 + t_chunk])
        r_all[:, n0:n0 + t_chunk] = np.hypot(x[..., 0], x[..., 1])
        z_all[:, n0:n0 + t_chunk] = x[..., 2]
    r_max = float(np.max(r_all))
    z_max = float(np.max(np.abs(z_all)))
    n_r = max(int(math.ceil(r_max / dr)) + 4, 6)
    r_grid = dr * np.arange(n_r)
    # below this radius J0(r/a) = 1 to double precision
    r_axis = 1e-8 * state.a
    if rule is None:
        rule = LongitudinalRule.build(state, z_max, float(t_nodes[-1]))
    out = np.zeros((len(s_nodes), n_t), dtype)
    for q, wq in zip(rule.p3, rule.weights):
        if wq == 0.0:
            continue
        tab = psi_tables(state, r_grid, np.array([q]), dt, n_t, dy_max)[0]
        for n0 in range(0, n_t, t_chunk):
            tt = t_nodes[n0:n0 + t_chunk]
            r = r_all[:, n0:n0 + t_chunk]
            # on-axis nodes take the r = 0 row directly
            val = np.broadcast_to(tab[0, n0:n0 + len(tt)], r.shape).copy()
            hot = r > r_axis
            if np.any(hot):
                idx, w = lagrange6(dr, n_r, r[hot])
                cols = np.nonzero(hot)[1] + n0
                val[hot] = np.sum(tab[idx, cols[:, None]] * w, axis=-1)
            out[:, n0:n0 + len(tt)] += (2.0 * math.pi * wq) * np.cos(q * z_all[:, n0:n0 + t_chunk]) \
                * np.exp(-1j * q * q * tt)[None, :] * val
    return out
