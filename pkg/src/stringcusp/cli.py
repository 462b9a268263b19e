"""Scenario driver.

    stringcusp <subcommand> --config scenario.ini [--out DIR] [--threads N]

The config is an INI document ([section] headers, ``key = value``, ``#``
comments).  Every key has a documented default (see ``SCHEMA``); unknown keys
are rejected.  Each subcommand writes its CSV, a ``manifest.txt`` echoing the
fully resolved config, and a small matplotlib script that plots the CSV.
"""

from __future__ import annotations

import argparse
import configparser
import math
import os
import platform
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy

from . import __version__
from .analysis import (TailPipeline, direction_grid, estimate_domain_q, position_exponent,
                       static_sample_set, tail_scan, verify_static_identity)
from .errors import (BudgetExceeded, ConeEmpty, ConfigError, DegenerateFit, ParseError,
                     QuadratureFailure, StringCuspError, ValidationError)
from .evolve import (FieldGrid, GridSpec, ProbeConfig, compute_I0_grid, free_norm, psi,
                     sample_delta_psi, volterra_iterate)
from .geometry import MoverCurve, MoverPath, StraightLine, SyntheticCusp, find_cusps
from .oscquad import I0_eval, QuadratureConfig
from .potential import PotentialParams
from .spectrum import BoundState, beta, kappa_table

EXIT_CODES = {"ok": 0, "other": 1, "config": 2, "quadrature": 3, "budget": 4, "fit": 5}

SUBCOMMANDS = ("bound-state", "cusp-scan", "field", "evolve", "tail-fit", "position-probe",
               "verify-static", "domain-q", "full-experiment")

# the adaptive rule refuses fewer panels than this
MIN_PANELS = 64

# kind, default.  "auto" defaults are resolved from the rest of the scenario.
SCHEMA = {
    "curve": {
        "preset": ("choice:straight|synthetic-cusp|mover", "straight"),
        "t1": ("float", 1.0),
        "sigma_t": ("float", 0.1),
        "A1": ("float", 0.5),
        "a_theta_max": ("float", 0.0),
        "a_u0": ("float", 0.0),
        "a_width": ("float", 1.0),
        "a_phi": ("float", 0.0),
        "b_theta_max": ("float", 0.0),
        "b_u0": ("float", 0.0),
        "b_width": ("float", 1.0),
        "b_phi": ("float", 0.0),
    },
    "potential": {
        "a": ("float", 0.1),
        "eps_a": ("float", -1.0 / (2.0 * math.pi**2)),
        "R": ("float", 10.0),
        "w": ("float", 1.0),
    },
    "spectrum": {
        "sigma3": ("float", 1.0),
        "amplitude": ("auto_float", "auto"),
    },
    "quad": {
        "abs_tol": ("float", 1e-10),
        "rel_tol": ("float", 1e-8),
        "max_panels": ("int", 20000),
        "panel_rule_order": ("int", 10),
        "mc_seed": ("int", 0),
        "field_budget": ("int", 40_000_000),
        "kernel_budget": ("int", 200_000_000),
        "probe_budget": ("int", 200_000),
    },
    "experiment": {
        "s_window": ("floats2", (-3.0, 3.0)),
        "t_window": ("floats2", (0.0, 2.0)),
        "cusp_grid": ("ints2", (241, 201)),
        "T": ("auto_float", "auto"),
        "ds": ("auto_float", "auto"),
        "dt": ("auto_float", "auto"),
        "field_method": ("choice:spectral|direct", "spectral"),
        "field_stride": ("ints2", (1, 1)),
        "born_order": ("int", 0),
        "born_method": ("choice:filon|cells|adaptive", "filon"),
        "direction": ("vec3", (0.0, 0.0, 1.0)),
        "p_min": ("auto_float", "auto"),
        "p_max": ("auto_float", "auto"),
        "n_p": ("int", 12),
        "tail_time": ("str", "auto"),
        "evolve_times": ("auto_floats", "auto"),
        "epsilon1": ("auto_float", "auto"),
        "dq_n_polar": ("int", 40),
        "dq_n_azimuth": ("int", 8),
        "dq_n_t": ("int", 21),
        "dq_n_s": ("int", 2001),
        "static_samples": ("int", 20),
        "static_seed": ("int", 0),
        "probe": ("bool", False),
        "probe_time": ("auto_float", "auto"),
        "probe_origin": ("auto_vec3", "auto"),
        "probe_direction": ("vec3", (1.0, 0.0, 0.0)),
        "probe_r_min": ("auto_float", "auto"),
        "probe_r_max": ("float", 0.5),
        "probe_n_r": ("int", 8),
        "probe_radial": ("int", 12),
        "probe_polar": ("int", 6),
        "probe_azimuth": ("int", 6),
    },
}


# ---------------------------------------------------------------------------
# parsing


def _convert(kind: str, raw: str, key: str):
    raw = raw.strip()
    try:
        if kind.startswith("auto_"):
            if raw.lower() == "auto":
                return "auto"
            return _convert(kind[5:], raw, key)
        if kind.startswith("choice:"):
            options = kind[7:].split("|")
            if raw not in options:
                raise ValidationError(key, f"must be one of {', '.join(options)}")
            return raw
        if kind == "str":
            return raw
        if kind == "bool":
            low = raw.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValidationError(key, "expected a boolean")
        if kind == "int":
            return int(raw)
        if kind == "float":
            v = float(raw)
            if not math.isfinite(v):
                raise ValidationError(key, "must be finite")
            return v
        parts = [x for x in raw.replace(",", " ").split()]
        if kind == "floats":
            return tuple(_convert("float", x, key) for x in parts)
        n = {"floats2": 2, "ints2": 2, "vec3": 3}[kind]
        if len(parts) != n:
            raise ValidationError(key, f"expected {n} comma-separated numbers")
        conv = "int" if kind == "ints2" else "float"
        return tuple(_convert(conv, x, key) for x in parts)
    except ValueError:
        raise ValidationError(key, f"cannot read {raw!r} as {kind}") from None


def _read_ini(text: str) -> dict:
    cp = configparser.ConfigParser(strict=True, interpolation=None, inline_comment_prefixes=("#",),
                                   comment_prefixes=("#",), empty_lines_in_values=False,
                                   default_section="\x00")
    cp.optionxform = str  # keep key case (A1, R, T)
    try:
        cp.read_string(text)
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as exc:
        raise ParseError(str(exc).split(": ", 1)[-1], exc.lineno) from None
    except configparser.MissingSectionHeaderError as exc:
        raise ParseError("key outside any [section]", exc.lineno) from None
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else 0
        raise ParseError("expected 'key = value'", line) from None
    return {sec: dict(cp.items(sec)) for sec in cp.sections()}


@dataclass
class ScenarioConfig:
    """Resolved scenario: typed values for every key plus the domain objects."""

    values: dict
    params: PotentialParams
    curve: object
    quad_raw: dict
    extra: dict = dc_field(default_factory=dict)

    def get(self, path: str):
        sec, key = path.split(".")
        return self.values[sec][key]

    @property
    def exp(self) -> dict:
        return self.values["experiment"]

    def quad(self) -> QuadratureConfig:
        q = self.quad_raw
        if q["max_panels"] < MIN_PANELS:
            raise QuadratureFailure(
                f"quad.max_panels={q['max_panels']} leaves the adaptive rule no room to subdivide",
                {"max_panels": q["max_panels"]})
        return QuadratureConfig(q["abs_tol"], q["rel_tol"], q["max_panels"], q["panel_rule_order"])

    def state(self, quad: QuadratureConfig | None = None) -> BoundState:
        amp = self.values["spectrum"]["amplitude"]
        return BoundState.build(self.params.a, self.params.eps_a, self.values["spectrum"]["sigma3"],
                                amp, quad or QuadratureConfig())

    def echo(self) -> list[str]:
        out = []
        for sec, keys in SCHEMA.items():
            for key in keys:
                out.append(f"{sec}.{key} = {_fmt_value(self.values[sec][key])}")
        return out


def _fmt_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_fmt_value(x) for x in v)
    return str(v)


def parse_config(text: str) -> ScenarioConfig:
    """INI text -> validated ScenarioConfig (ParseError / ValidationError on problems)."""
    raw = _read_ini(text)
    values = {}
    for sec, body in raw.items():
        if sec not in SCHEMA:
            raise ValidationError(sec, "unknown section")
        for key in body:
            if key not in SCHEMA[sec]:
                raise ValidationError(f"{sec}.{key}", "unknown key")
    for sec, keys in SCHEMA.items():
        values[sec] = {}
        for key, (kind, default) in keys.items():
            given = raw.get(sec, {}).get(key)
            values[sec][key] = default if given is None else _convert(kind, given, f"{sec}.{key}")
    return _validate(values)


def _validate(values: dict) -> ScenarioConfig:
    pot = values["potential"]
    for key, ok, msg in (("a", pot["a"] > 0, "must be positive"),
                         ("eps_a", pot["eps_a"] < 0, "must be negative (no bound state otherwise)"),
                         ("R", pot["R"] >= 1, "must be >= 1"),
                         ("w", pot["w"] > 0, "must be positive")):
        if not ok:
            raise ValidationError(f"potential.{key}", msg)
    params = PotentialParams(pot["a"], pot["eps_a"], pot["R"], pot["w"])

    spec = values["spectrum"]
    p3_max = math.exp(-beta(params.eps_a) / 2.0) / params.a
    if not 0 < spec["sigma3"] <= p3_max / 4.0:
        raise ValidationError("spectrum.sigma3", f"must lie in (0, p3_max/4 = {p3_max / 4.0:.6g}]")
    if spec["amplitude"] != "auto" and not spec["amplitude"] > 0:
        raise ValidationError("spectrum.amplitude", "must be 'auto' or positive")

    q = values["quad"]
    for key in ("abs_tol", "rel_tol"):
        if not q[key] > 0:
            raise ValidationError(f"quad.{key}", "must be positive")
    if q["max_panels"] < 1:
        raise ValidationError("quad.max_panels", "must be >= 1")
    if q["panel_rule_order"] < 2:
        raise ValidationError("quad.panel_rule_order", "must be >= 2")
    for key in ("field_budget", "kernel_budget", "probe_budget"):
        if q[key] < 1:
            raise ValidationError(f"quad.{key}", "must be >= 1")

    c = values["curve"]
    try:
        if c["preset"] == "straight":
            curve = StraightLine()
        elif c["preset"] == "synthetic-cusp":
            curve = SyntheticCusp(c["t1"], c["sigma_t"], c["A1"])
        else:
            if c["a_width"] <= 0 or c["b_width"] <= 0:
                raise ValueError("mover widths must be positive")
            curve = MoverCurve(MoverPath(c["a_theta_max"], c["a_u0"], c["a_width"], c["a_phi"]),
                               MoverPath(c["b_theta_max"], c["b_u0"], c["b_width"], c["b_phi"]))
    except ValueError as exc:
        raise ValidationError("curve", str(exc)) from None

    e = values["experiment"]
    synthetic = c["preset"] == "synthetic-cusp"
    a = params.a

    def resolve(key, value):
        if e[key] == "auto":
            e[key] = value

    resolve("T", round(c["t1"] + 2.0 * c["sigma_t"], 12) if synthetic else 0.2)
    resolve("tail_time", "post" if synthetic else repr(e["T"]))
    resolve("p_min", 0.05 / a)
    resolve("p_max", 0.8 / a)
    resolve("epsilon1", round(c["t1"] - 3.0 * c["sigma_t"], 12) if synthetic else 1.0)
    resolve("evolve_times", (e["T"],))
    resolve("probe_time", e["T"])
    resolve("probe_r_min", min(5.0 * a, e["probe_r_max"] / 10.0))
    if e["probe_origin"] == "auto":
        x = curve.position(0.0, e["probe_time"]) if synthetic else np.zeros(3)
        e["probe_origin"] = tuple(float(v) for v in x)

    checks = [
        ("T", e["T"] > 0, "must be positive"),
        ("ds", e["ds"] == "auto" or 0 < e["ds"] <= math.pi * a / 4.0 * (1 + 1e-12),
         f"must lie in (0, pi a/4 = {math.pi * a / 4.0:.6g}]"),
        ("dt", e["dt"] == "auto" or 0 < e["dt"] <= math.pi * a * a / 4.0 * (1 + 1e-12),
         f"must lie in (0, pi a^2/4 = {math.pi * a * a / 4.0:.6g}]"),
        ("s_window", e["s_window"][0] < e["s_window"][1], "must be increasing"),
        ("t_window", e["t_window"][0] < e["t_window"][1], "must be increasing"),
        ("cusp_grid", min(e["cusp_grid"]) >= 3, "needs at least 3 points per axis"),
        ("field_stride", min(e["field_stride"]) >= 1, "must be >= 1"),
        ("born_order", 0 <= e["born_order"] <= 4, "must be in 0..4"),
        ("direction", np.linalg.norm(e["direction"]) > 0, "must be nonzero"),
        ("probe_direction", np.linalg.norm(e["probe_direction"]) > 0, "must be nonzero"),
        ("p_min", 0 < e["p_min"] < e["p_max"], "must satisfy 0 < p_min < p_max"),
        ("p_max", e["p_max"] < 1.0 / a, "must be below the cutoff 1/a"),
        ("n_p", e["n_p"] >= 8, "the power-law fit needs at least 8 momenta"),
        ("evolve_times", all(0 <= t <= e["T"] for t in e["evolve_times"]), "must lie in [0, T]"),
        ("epsilon1", e["epsilon1"] > 0, "must be positive"),
        ("static_samples", e["static_samples"] >= 1, "must be >= 1"),
        ("probe_time", 0 < e["probe_time"] <= e["T"], "must lie in (0, T]"),
        ("probe_r_min", 0 < e["probe_r_min"] < e["probe_r_max"], "must be below probe_r_max"),
        ("probe_n_r", e["probe_n_r"] >= 8, "the power-law fit needs at least 8 radii"),
    ]
    for key in ("dq_n_polar", "dq_n_azimuth", "dq_n_t", "dq_n_s", "probe_radial", "probe_polar",
                "probe_azimuth"):
        checks.append((key, e[key] >= 2, "must be >= 2"))
    for key, ok, msg in checks:
        if not ok:
            raise ValidationError(f"experiment.{key}", msg)
    tt = e["tail_time"]
    if tt in ("pre", "post"):
        if not synthetic:
            raise ValidationError("experiment.tail_time", "'pre'/'post' need the synthetic-cusp preset")
    else:
        try:
            tv = float(tt)
        except ValueError:
            raise ValidationError("experiment.tail_time", "must be 'pre', 'post' or a time") from None
        if not 0 < tv <= e["T"]:
            raise ValidationError("experiment.tail_time", "must lie in (0, T]")
    return ScenarioConfig(values, params, curve, dict(q))


def load_config(path: str) -> ScenarioConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ValidationError("--config", str(exc)) from None
    return parse_config(text)


# ---------------------------------------------------------------------------
# output helpers


def _num(x) -> str:
    return f"{float(x):.17g}"


def write_csv(path: str, header: str, rows, footer: tuple[str, tuple] | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(_num(v) for v in row) + "\n")
        if footer is not None:
            fh.write(footer[0] + "\n")
            fh.write(",".join(_num(v) for v in footer[1]) + "\n")


_PLOT = '''"""Plot {csv} (written by stringcusp {cmd})."""
import sys

import matplotlib.pyplot as plt
import numpy as np

path = sys.argv[1] if len(sys.argv) > 1 else "{csv}"
with open(path) as fh:
    lines = fh.read().splitlines()
header = lines[0].split(",")
rows = []
for ln in lines[1:]:
    try:
        rows.append([float(v) for v in ln.split(",")])
    except ValueError:
        break  # footer
data = np.array(rows, ndmin=2)
x, y = header.index("{x}"), header.index("{y}")
fig, ax = plt.subplots()
ax.plot(data[:, x], data[:, y], "{style}")
ax.set_xlabel("{x}")
ax.set_ylabel("{y}")
{scale}fig.savefig(path.rsplit(".", 1)[0] + ".png", dpi=120)
'''


def write_plot_script(out: str, cmd: str, csv: str, x: str, y: str, loglog: bool = False,
                      style: str = "o-") -> str:
    name = os.path.join(out, "plot_" + csv.rsplit(".", 1)[0] + ".py")
    scale = 'ax.set_xscale("log")\nax.set_yscale("log")\n' if loglog else ""
    with open(name, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_PLOT.format(csv=csv, cmd=cmd, x=x, y=y, style=style, scale=scale))
    return name


@dataclass
class RunContext:
    cfg: ScenarioConfig
    out: str
    threads: int
    command: str
    report: dict = dc_field(default_factory=dict)
    budgets: dict = dc_field(default_factory=dict)
    files: list = dc_field(default_factory=list)
    _field: dict = dc_field(default_factory=dict)
    _state: object = None

    def path(self, name: str) -> str:
        self.files.append(name)
        return os.path.join(self.out, name)

    def pmap(self, fn, items):
        items = list(items)
        if self.threads > 1 and len(items) > 1:
            with ThreadPoolExecutor(self.threads) as ex:
                return list(ex.map(fn, items))
        return [fn(x) for x in items]

    def state(self):
        if self._state is None:
            self._state = self.cfg.state(self.cfg.quad())
        return self._state


def write_manifest(ctx: RunContext, wall: float, status: str) -> None:
    lines = [
        f"command = {ctx.command}",
        f"status = {status}",
        f"stringcusp = {__version__}",
        f"python = {platform.python_version()}",
        f"numpy = {np.__version__}",
        f"scipy = {scipy.__version__}",
        f"threads = {ctx.threads}",
        f"wall_time_s = {wall:.3f}",
        f"files = {', '.join(ctx.files)}",
    ]
    lines += ["config." + ln for ln in ctx.cfg.echo()]
    lines += [f"budget.{k} = {v}" for k, v in ctx.budgets.items()]
    lines += [f"result.{k} = {_fmt_value(v)}" for k, v in ctx.report.items()]
    with open(os.path.join(ctx.out, "manifest.txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_bound_state(ctx: RunContext) -> None:
    st = ctx.cfg.state(QuadratureConfig())
    tab = kappa_table(st)
    write_csv(ctx.path("bound_state.csv"), "p3,kappa_sq", tab)
    write_plot_script(ctx.out, ctx.command, "bound_state.csv", "p3", "kappa_sq")
    ctx.report.update(beta=float(st.beta), p3_max=float(st.p3_max), kappa_sq_0=float(tab[0, 1]),
                      amplitude=float(st.packet.amplitude))


def cmd_cusp_scan(ctx: RunContext):
    e = ctx.cfg.exp
    events = find_cusps(ctx.cfg.curve, e["s_window"], e["t_window"], e["cusp_grid"])
    write_csv(ctx.path("cusps.csv"), "s1,t1,x1,x2,x3,tangent_residual", [ev.as_row() for ev in events])
    write_plot_script(ctx.out, ctx.command, "cusps.csv", "s1", "t1", style="x")
    ctx.report["n_cusps"] = len(events)
    return events


def build_field(ctx: RunContext) -> FieldGrid:
    if "grid" in ctx._field:
        return ctx._field["grid"]
    cfg, e = ctx.cfg, ctx.cfg.exp
    quad = cfg.quad()
    st = ctx.state()
    spec = GridSpec(e["T"], None if e["ds"] == "auto" else e["ds"], None if e["dt"] == "auto" else e["dt"])
    s_nodes, t_nodes = spec.nodes(cfg.params)
    n_nodes = len(s_nodes) * len(t_nodes)
    ctx.budgets["field_nodes"] = n_nodes
    if n_nodes > cfg.quad_raw["field_budget"]:
        raise BudgetExceeded(f"field needs {n_nodes} nodes, quad.field_budget is {cfg.quad_raw['field_budget']}")
    grid = compute_I0_grid(cfg.curve, st, cfg.params, spec, quad, e["field_method"], ctx.threads)
    # spot check one interior node against the adaptive evaluator
    i, j = len(s_nodes) // 2, len(t_nodes) - 1
    ref = I0_eval(float(s_nodes[i]), float(t_nodes[j]), cfg.curve, st, cfg.params, quad)
    ctx.report["field_spot_check_rel"] = float(abs(grid.values[i, j] - ref) / max(abs(ref), 1e-300))
    if e["born_order"] > 0:
        ns, nt = len(s_nodes), len(t_nodes)
        pairs = ns * ns * nt * (nt + 1) // 2
        ctx.budgets["kernel_pairs"] = pairs
        if pairs > cfg.quad_raw["kernel_budget"]:
            raise BudgetExceeded(f"Picard iteration needs {pairs} kernel values, "
                                 f"quad.kernel_budget is {cfg.quad_raw['kernel_budget']}")
        grid = volterra_iterate(grid, cfg.curve, cfg.params, e["born_order"], quad)
        ctx.report["picard_diffs"] = tuple(float(d) for d in grid.meta["picard_diffs"])
    ctx._field["grid"] = grid
    return grid


def cmd_field(ctx: RunContext) -> FieldGrid:
    grid = build_field(ctx)
    k, m = ctx.cfg.exp["field_stride"]
    si = np.arange(0, len(grid.s_nodes), k)
    tj = np.arange(0, len(grid.t_nodes), m)

    def rows():
        for i in si:
            for j in tj:
                v = grid.values[i, j]
                yield grid.s_nodes[i], grid.t_nodes[j], v.real, v.imag

    write_csv(ctx.path("field.csv"), "s,t,re_I,im_I", rows())
    write_plot_script(ctx.out, ctx.command, "field.csv", "s", "re_I", style=".")
    ctx.report["field_shape"] = f"{len(grid.s_nodes)}x{len(grid.t_nodes)}"
    return grid


def _unit(v):
    v = np.asarray(v, float)
    return v / np.linalg.norm(v)


def _p_grid(e) -> np.ndarray:
    return np.geomspace(e["p_min"], e["p_max"], e["n_p"])


def _check_node(grid: FieldGrid, t: float, key: str) -> None:
    k = round(t / grid.dt)
    if abs(k * grid.dt - t) > 1e-9 * max(1.0, t):
        raise ValidationError(key, f"time {t} is not a lattice node (dt = {grid.dt:.6g})")


def cmd_evolve(ctx: RunContext) -> None:
    cfg, e = ctx.cfg, ctx.cfg.exp
    grid = build_field(ctx)
    st, quad = ctx.state(), cfg.quad()
    u = _unit(e["direction"])
    method = e["born_method"]
    if method == "filon":
        for t in e["evolve_times"]:
            if t > 0:
                _check_node(grid, t, "experiment.evolve_times")
    pts = [(p * u, t) for t in e["evolve_times"] for p in _p_grid(e)]

    def one(item):
        p, t = item
        return psi(p, t, st, grid, cfg.curve, cfg.params, quad, method).delta

    vals = ctx.pmap(one, pts)
    rows = [(p[0], p[1], p[2], t, v.real, v.imag, abs(v)) for (p, t), v in zip(pts, vals)]
    write_csv(ctx.path("evolve.csv"), "px,py,pz,t,re,im,abs", rows)
    write_plot_script(ctx.out, ctx.command, "evolve.csv", "pz" if abs(u[2]) > 0.5 else "px", "abs",
                      loglog=True)
    n0 = free_norm(st, 0.0, quad)
    nT = free_norm(st, e["T"], quad)
    ctx.report.update(free_norm_0=n0, free_norm_T=nT)


def _tail_time(cfg: ScenarioConfig, which=None) -> float:
    which = cfg.exp["tail_time"] if which is None else which
    c = cfg.values["curve"]
    if which == "pre":
        return round(c["t1"] - 3.0 * c["sigma_t"], 12)
    if which == "post":
        return round(c["t1"] + 2.0 * c["sigma_t"], 12)
    return float(which)


def run_tail(ctx: RunContext, which=None, csv: str = "tail_fit.csv"):
    cfg, e = ctx.cfg, ctx.cfg.exp
    t = _tail_time(cfg, which)
    if t > e["T"] + 1e-12:
        raise ValidationError("experiment.T", f"field ends before the tail time {t}")
    grid = build_field(ctx)
    if e["born_method"] == "filon":
        _check_node(grid, t, "experiment.tail_time")
    pipe = TailPipeline(cfg.curve, ctx.state(), cfg.params, grid, cfg.quad(), e["born_method"])
    res = tail_scan(_unit(e["direction"]), t, _p_grid(e), pipe)
    write_csv(ctx.path(csv), "p,abs_delta_psi", res.samples,
              ("slope,stderr,r2", (res.slope, res.stderr, res.r_squared)))
    write_plot_script(ctx.out, ctx.command, csv, "p", "abs_delta_psi", loglog=True)
    tag = csv.rsplit(".", 1)[0]
    ctx.report.update({f"{tag}.time": t, f"{tag}.slope": res.slope, f"{tag}.stderr": res.stderr,
                       f"{tag}.r2": res.r_squared, f"{tag}.conclusive": res.conclusive,
                       f"{tag}.steeper_than_2": res.slope < -2.0})
    return res


def cmd_tail_fit(ctx: RunContext) -> None:
    run_tail(ctx)


def run_probe(ctx: RunContext, csv: str = "position_probe.csv"):
    cfg, e = ctx.cfg, ctx.cfg.exp
    pc = ProbeConfig(e["probe_radial"], e["probe_polar"], e["probe_azimuth"], cfg.quad_raw["probe_budget"])
    ctx.budgets["probe_nodes"] = pc.n_nodes
    if pc.n_nodes > pc.max_nodes:
        raise BudgetExceeded(f"probe needs {pc.n_nodes} nodes, quad.probe_budget is {pc.max_nodes}")
    grid = build_field(ctx)
    t = e["probe_time"]
    if e["born_method"] == "filon":
        _check_node(grid, t, "experiment.probe_time")
    samples = sample_delta_psi(t, ctx.state(), grid, cfg.curve, cfg.params, pc, cfg.quad(), e["born_method"])
    radii = np.geomspace(e["probe_r_min"], e["probe_r_max"], e["probe_n_r"])
    origin = np.asarray(e["probe_origin"], float)
    u = _unit(e["probe_direction"])
    res = position_exponent(origin, u, radii, t, samples)
    rows = [(r, *(origin + r * u), m) for r, m in res.samples]
    write_csv(ctx.path(csv), "r,x1,x2,x3,abs_delta_psi", rows,
              ("slope,stderr,r2", (res.slope, res.stderr, res.r_squared)))
    write_plot_script(ctx.out, ctx.command, csv, "r", "abs_delta_psi", loglog=True)
    ctx.report.update(probe_slope=res.slope, probe_stderr=res.stderr, probe_r2=res.r_squared)
    return res


def cmd_position_probe(ctx: RunContext) -> None:
    run_probe(ctx)


def cmd_verify_static(ctx: RunContext) -> None:
    cfg, e = ctx.cfg, ctx.cfg.exp
    quad = cfg.quad()
    st = ctx.state()
    samples = static_sample_set(e["static_samples"], e["static_seed"])
    rep = verify_static_identity(cfg.params, st, quad, samples)
    rows = [(*p, t, r) for (p, t), r in zip(rep.sample_points, rep.residuals)]
    write_csv(ctx.path("verify_static.csv"), "px,py,pz,t,residual", rows,
              ("max_abs_residual,quad_tolerance_budget", (rep.max_abs_residual, rep.quad_tolerance_budget)))
    write_plot_script(ctx.out, ctx.command, "verify_static.csv", "t", "residual", style="o")
    ctx.report.update(max_abs_residual=rep.max_abs_residual, below_1e_4=rep.max_abs_residual < 1e-4,
                      curve_used="straight")


def cmd_domain_q(ctx: RunContext) -> None:
    e = ctx.cfg.exp
    s_grid = np.linspace(*e["s_window"], e["dq_n_s"])
    dirs = direction_grid(e["dq_n_polar"], e["dq_n_azimuth"])
    res = estimate_domain_q(ctx.cfg.curve, e["epsilon1"], s_grid, dirs, e["dq_n_t"])
    write_csv(ctx.path("domain_q.csv"), "epsilon1,q_estimate", [(res.epsilon1, res.q_estimate)])
    write_plot_script(ctx.out, ctx.command, "domain_q.csv", "epsilon1", "q_estimate", style="o")
    ctx.report["q_estimate"] = res.q_estimate


def cmd_full_experiment(ctx: RunContext) -> None:
    cfg = ctx.cfg
    if cfg.values["curve"]["preset"] != "synthetic-cusp":
        raise ValidationError("curve.preset", "full-experiment needs the synthetic-cusp preset")
    events = cmd_cusp_scan(ctx)
    cmd_field(ctx)
    pre = run_tail(ctx, "pre", "tail_pre.csv")
    post = run_tail(ctx, "post", "tail_post.csv")
    lines = [f"cusps = {len(events)}"]
    for ev in events:
        lines.append(f"cusp = s1 {ev.s1:.12g}, t1 {ev.t1:.12g}, residual {ev.tangent_residual:.3g}")
    for tag, r in (("pre", pre), ("post", post)):
        lines.append(f"tail_{tag} = t {r.time:.6g}, slope {r.slope:.6g} +- {r.stderr:.3g}, "
                     f"r2 {r.r_squared:.6g}, conclusive {r.conclusive}")
    lines.append(f"pre_minus_post_slope = {pre.slope - post.slope:.6g}")
    if cfg.exp["probe"]:
        pr = run_probe(ctx)
        lines.append(f"probe = slope {pr.slope:.6g} +- {pr.stderr:.3g}, r2 {pr.r_squared:.6g}")
    with open(ctx.path("report.txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


COMMANDS = {
    "bound-state": cmd_bound_state,
    "cusp-scan": cmd_cusp_scan,
    "field": cmd_field,
    "evolve": cmd_evolve,
    "tail-fit": cmd_tail_fit,
    "position-probe": cmd_position_probe,
    "verify-static": cmd_verify_static,
    "domain-q": cmd_domain_q,
    "full-experiment": cmd_full_experiment,
}


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CODES["config"]
    if isinstance(exc, QuadratureFailure):
        return EXIT_CODES["quadrature"]
    if isinstance(exc, BudgetExceeded):
        return EXIT_CODES["budget"]
    if isinstance(exc, (DegenerateFit, ConeEmpty)):
        return EXIT_CODES["fit"]
    return EXIT_CODES["other"]


def run(subcommand: str, cfg: ScenarioConfig, out: str = "out", threads: int = 1) -> int:
    """Run one subcommand; returns the exit code.  Artifacts go to ``out``."""
    if subcommand not in COMMANDS:
        raise ValueError(f"unknown subcommand {subcommand!r}")
    os.makedirs(out, exist_ok=True)
    ctx = RunContext(cfg, out, max(1, int(threads)), subcommand)
    t0 = time.perf_counter()
    try:
        COMMANDS[subcommand](ctx)
        code, status = 0, "ok"
    except StringCuspError as exc:
        code = exit_code_for(exc)
        status = f"error ({type(exc).__name__}): {exc}"
        print(f"stringcusp {subcommand}: {status}", file=sys.stderr)
    write_manifest(ctx, time.perf_counter() - t0, status)
    return code


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="stringcusp", description=__doc__.splitlines()[0])
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", required=True, help="scenario INI file")
    ap.add_argument("--out", default="out", help="output directory (default ./out)")
    ap.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
    args = ap.parse_args(argv)
    threads = args.threads if args.threads is not None else (os.cpu_count() or 1)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"stringcusp: config error: {exc}", file=sys.stderr)
        return EXIT_CODES["config"]
    return run(args.subcommand, cfg, args.out, threads)


if __name__ == "__main__":
    sys.exit(main())
