"""
Run configuration: YAML documents with nested sections, validated into objects.

Schema (all sections optional unless the subcommand needs them)::

    dipoles:    {ring: {count, radius}} | {positions: [[x, y], ...], directions: [...]}
    domain:     {center: [x, y], radius}
    disk:       {center: [x, y], radius}              # reference disk Dhat
    quadrature: {n_r, n_phi}
    motion:     {kind: time|arc, end, path: CURVE, scale: CURVE}
    target:     {type: constant, vector} | {type: rotating, amplitude, phase, rate}
                | {type: tabulated, times, vectors}
    problem1:   {T, N, lam, alpha0, lower, upper}
    problem2:   {s_F, M, lam, eta, beta, alpha0, theta0, lower, upper, theta_lower, theta_upper}
    optimizer:  {tol, max_iters, armijo_c, backtrack, step0, memory, seed, warm_start, tol_inner}
    transport:  {eps, mesh_n, time_steps, T, bump_center, bump_radius, supg, lumped_mass,
                 control, snapshot_times, solution}
    field_dump: {bounds: [lo, hi], n, alpha}
    refine:     {levels: [10, 20, 40, 80]}
    output:     {dir}

``CURVE`` is one of ``{type: constant, value}``, ``{type: line, start, velocity}``,
``{type: segment, start, end}`` (unit speed), ``{type: arc, center, radius, phase,
rate}`` or ``{type: tabulated, knots, values}``.  Angles are in radians; the
strings ``pi``, ``-pi``, ``pi/2`` and similar are accepted wherever a number is.
"""

import copy
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .field import DipoleArray
from .motion import (
    CircularArc,
    Constant,
    ConstantTarget,
    LineSegment,
    MotionLaw,
    RotatingTarget,
    Tabulated,
    TabulatedTarget,
    build_disk_quadrature,
)
from .optimizer import OptimizerOptions
from .transport import TransportConfig

PRESETS = ("paper_p1_f1", "paper_p1_f2", "paper_p2", "paper_transport")


class ConfigError(ValueError):
    """Configuration could not be parsed or violates an invariant."""


_PI_EXPR = re.compile(r"^\s*(-?)\s*(\d*\.?\d*)\s*\*?\s*pi\s*(?:/\s*(\d+\.?\d*))?\s*$")


def _num(value, where):
    if isinstance(value, bool):
        raise ConfigError(f"{where}: expected a number, got a boolean")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        m = _PI_EXPR.match(value)
        if m:
            sign = -1.0 if m.group(1) else 1.0
            coef = float(m.group(2)) if m.group(2) else 1.0
            den = float(m.group(3)) if m.group(3) else 1.0
            return sign * coef * math.pi / den
        try:
            return float(value)
        except ValueError:
            pass
    raise ConfigError(f"{where}: expected a number, got {value!r}")


def _vec(value, where, length=None):
    if not isinstance(value, (list, tuple)):
        raise ConfigError(f"{where}: expected a list of numbers")
    out = np.array([_num(v, f"{where}[{i}]") for i, v in enumerate(value)])
    if length is not None and len(out) != length:
        raise ConfigError(f"{where}: expected {length} entries, got {len(out)}")
    return out


def _vec_or_scalar(value, where, length):
    if isinstance(value, (list, tuple)):
        return _vec(value, where, length)
    return np.full(length, _num(value, where))


def _int(value, where, minimum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{where}: expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{where}: must be >= {minimum}, got {value}")
    return value


def _section(doc, name):
    sec = doc.get(name) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"{name}: expected a mapping")
    return sec


def _check_keys(sec, allowed, where):
    extra = set(sec) - set(allowed)
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {sorted(extra)}")


def _curve(spec, where, dim):
    if not isinstance(spec, dict) or "type" not in spec:
        raise ConfigError(f"{where}: curve needs a 'type'")
    kind = spec["type"]
    if kind == "constant":
        v = spec.get("value", 1.0)
        return Constant(_vec(v, f"{where}.value", dim) if isinstance(v, list) else _num(v, f"{where}.value"))
    if kind == "line":
        return LineSegment(_vec(spec["start"], f"{where}.start", dim),
                           _vec(spec["velocity"], f"{where}.velocity", dim))
    if kind == "segment":
        start = _vec(spec["start"], f"{where}.start", dim)
        end = _vec(spec["end"], f"{where}.end", dim)
        if np.allclose(start, end):
            raise ConfigError(f"{where}: segment start and end coincide")
        return LineSegment.between(start, end)
    if kind == "arc":
        return CircularArc(tuple(_vec(spec["center"], f"{where}.center", 2)),
                           _num(spec["radius"], f"{where}.radius"),
                           _num(spec["phase"], f"{where}.phase"),
                           _num(spec["rate"], f"{where}.rate"))
    if kind == "tabulated":
        knots = _vec(spec["knots"], f"{where}.knots")
        vals = spec["values"]
        if vals and isinstance(vals[0], list):
            vals = np.array([_vec(v, f"{where}.values[{i}]", dim) for i, v in enumerate(vals)])
        else:
            vals = _vec(vals, f"{where}.values")
        try:
            return Tabulated(knots, vals)
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from exc
    raise ConfigError(f"{where}: unknown curve type {kind!r}")


def _target(spec, dim):
    kind = spec.get("type", "constant")
    if kind == "constant":
        return ConstantTarget(tuple(_vec(spec.get("vector", [1.0, 0.0]), "target.vector", dim)))
    if kind == "rotating":
        return RotatingTarget(_num(spec.get("amplitude", 1.0), "target.amplitude"),
                              _num(spec["phase"], "target.phase"),
                              _num(spec["rate"], "target.rate"))
    if kind == "tabulated":
        times = _vec(spec["times"], "target.times")
        vecs = np.array([_vec(v, f"target.vectors[{i}]", dim) for i, v in enumerate(spec["vectors"])])
        return TabulatedTarget(times, vecs)
    raise ConfigError(f"target: unknown type {kind!r}")


@dataclass
class RunConfig:
    """Validated configuration plus the raw document it came from."""

    raw: dict
    dipoles: DipoleArray
    domain_center: np.ndarray
    domain_radius: float
    law: MotionLaw = None
    target: object = None
    quad: object = None
    problem1: dict = None
    problem2: dict = None
    optimizer: OptimizerOptions = field(default_factory=OptimizerOptions)
    warm_start: str = "algorithm"
    tol_inner: float = 1e-3
    transport: TransportConfig = None
    transport_control: str = "linear"
    transport_solution: str = None
    field_dump: dict = None
    refine_levels: tuple = (10, 20, 40, 80)
    out_dir: str = None
    source: str = None


def _dipoles(sec):
    if "ring" in sec:
        ring = sec["ring"]
        return DipoleArray.ring(_int(ring.get("count", 8), "dipoles.ring.count", 1),
                                _num(ring.get("radius", 1.2), "dipoles.ring.radius"))
    if "positions" in sec:
        pos = np.array([_vec(p, f"dipoles.positions[{i}]") for i, p in enumerate(sec["positions"])])
        dirs = np.array([_vec(p, f"dipoles.directions[{i}]") for i, p in enumerate(sec["directions"])])
        try:
            return DipoleArray(pos, dirs)
        except ValueError as exc:
            raise ConfigError(f"dipoles: {exc}") from exc
    return DipoleArray.ring()


def _bounds(sec, where, n_p, lo_default, hi_default):
    lo = _vec_or_scalar(sec.get("lower", lo_default), f"{where}.lower", n_p)
    hi = _vec_or_scalar(sec.get("upper", hi_default), f"{where}.upper", n_p)
    if np.any(lo > hi):
        raise ConfigError(f"{where}: bounds invariant violated (lower > upper)")
    return lo, hi


def build_config(doc, source=None):
    """Validate a parsed document and build the run objects."""
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("top level of the configuration must be a mapping")
    _check_keys(doc, ("name", "dipoles", "domain", "disk", "quadrature", "motion", "target",
                      "problem1", "problem2", "optimizer", "transport", "field_dump",
                      "refine", "output"), "config")
    dipoles = _dipoles(_section(doc, "dipoles"))
    dom = _section(doc, "domain")
    d_center = _vec(dom.get("center", [0.0, 0.0]), "domain.center", dipoles.dim)
    d_radius = _num(dom.get("radius", 1.0), "domain.radius")
    if d_radius <= 0:
        raise ConfigError("domain.radius must be positive")
    try:
        dipoles.check_outside(d_center, d_radius)
    except ValueError as exc:
        raise ConfigError(f"dipoles: {exc}") from exc

    cfg = RunConfig(raw=copy.deepcopy(doc), dipoles=dipoles, domain_center=d_center,
                    domain_radius=d_radius, source=source)

    disk = _section(doc, "disk")
    disk_center = tuple(float(v) for v in _vec(disk.get("center", [0.0, 0.0]), "disk.center", dipoles.dim))
    disk_radius = _num(disk.get("radius", 0.2), "disk.radius")
    if disk_radius <= 0:
        raise ConfigError("disk.radius must be positive")
    q = _section(doc, "quadrature")
    cfg.quad = build_disk_quadrature(disk_radius, disk_center,
                                     _int(q.get("n_r", 8), "quadrature.n_r", 1),
                                     _int(q.get("n_phi", 16), "quadrature.n_phi", 1))

    if "motion" in doc:
        m = _section(doc, "motion")
        _check_keys(m, ("kind", "end", "path", "scale"), "motion")
        kind = m.get("kind", "time")
        end = _num(m.get("end", 1.0), "motion.end")
        path = _curve(m.get("path", {"type": "constant", "value": [0.0, 0.0]}), "motion.path", dipoles.dim)
        scale = _curve(m.get("scale", {"type": "constant", "value": 1.0}), "motion.scale", None)
        try:
            cfg.law = MotionLaw(kind, path, scale, end, disk_center, disk_radius)
        except ValueError as exc:
            raise ConfigError(f"motion: {exc}") from exc
        sec, key = ("problem1", "N") if kind == "time" else ("problem2", "M")
        steps = _int((doc.get(sec) or {}).get(key, 80), f"{sec}.{key}", 1)
        grid = np.linspace(0.0, end, steps + 1)
        if np.any(np.asarray(scale.value(grid)) <= 0):
            raise ConfigError("motion.scale: scaling must stay positive")
        try:
            cfg.law.validate(grid, cfg.quad, d_center, d_radius)
        except ValueError as exc:
            raise ConfigError(f"motion: {exc}") from exc

    if "target" in doc:
        cfg.target = _target(_section(doc, "target"), dipoles.dim)
        if isinstance(cfg.target, TabulatedTarget) and cfg.law is not None and not cfg.target.covers(cfg.law.end):
            raise ConfigError("target: tabulated samples must cover [0, T]")

    n_p = dipoles.n_p
    if "problem1" in doc:
        p = _section(doc, "problem1")
        _check_keys(p, ("T", "N", "lam", "alpha0", "lower", "upper"), "problem1")
        lo, hi = _bounds(p, "problem1", n_p, -2.0, 2.0)
        spec = dict(
            T=_num(p.get("T", 1.0), "problem1.T"),
            N=_int(p.get("N", 80), "problem1.N", 1),
            lam=_num(p.get("lam", 1e-5), "problem1.lam"),
            alpha0=_vec_or_scalar(p.get("alpha0", 1.0), "problem1.alpha0", n_p),
            lower=lo, upper=hi,
        )
        if spec["lam"] <= 0 or spec["T"] <= 0:
            raise ConfigError("problem1: lam and T must be positive")
        if np.any(spec["alpha0"] < lo) or np.any(spec["alpha0"] > hi):
            raise ConfigError("problem1: alpha0 violates the bounds invariant")
        if cfg.law is not None and abs(cfg.law.end - spec["T"]) > 1e-12:
            raise ConfigError("problem1: T must equal motion.end")
        cfg.problem1 = spec

    if "problem2" in doc:
        p = _section(doc, "problem2")
        _check_keys(p, ("s_F", "M", "lam", "eta", "beta", "alpha0", "theta0", "lower", "upper",
                        "theta_lower", "theta_upper"), "problem2")
        lo, hi = _bounds(p, "problem2", n_p, -1.0, 1.0)
        spec = dict(
            M=_int(p.get("M", 80), "problem2.M", 1),
            lam=_num(p.get("lam", 1e-6), "problem2.lam"),
            eta=_num(p.get("eta", 1e-4), "problem2.eta"),
            beta=_num(p.get("beta", 0.1), "problem2.beta"),
            alpha0=_vec_or_scalar(p.get("alpha0", 1e-6), "problem2.alpha0", n_p),
            theta0=_num(p.get("theta0", 1e-6), "problem2.theta0"),
            lower=lo, upper=hi,
            theta_lower=_num(p.get("theta_lower", 1e-10), "problem2.theta_lower"),
            theta_upper=_num(p.get("theta_upper", 10.0), "problem2.theta_upper"),
        )
        if min(spec["lam"], spec["eta"], spec["beta"]) <= 0:
            raise ConfigError("problem2: lam, eta and beta must be positive")
        if not 0 < spec["theta_lower"] <= spec["theta_upper"]:
            raise ConfigError("problem2: speed bounds invariant violated (need 0 < theta_lower <= theta_upper)")
        if not spec["theta_lower"] <= spec["theta0"] <= spec["theta_upper"]:
            raise ConfigError("problem2: theta0 violates the speed bounds invariant")
        if np.any(spec["alpha0"] < lo) or np.any(spec["alpha0"] > hi):
            raise ConfigError("problem2: alpha0 violates the bounds invariant")
        if "s_F" in p and cfg.law is not None and abs(_num(p["s_F"], "problem2.s_F") - cfg.law.end) > 1e-12:
            raise ConfigError("problem2: s_F must equal motion.end")
        if cfg.law is not None and cfg.law.kind != "arc":
            raise ConfigError("problem2: motion.kind must be 'arc'")
        cfg.problem2 = spec

    o = _section(doc, "optimizer")
    _check_keys(o, ("tol", "max_iters", "armijo_c", "backtrack", "step0", "memory", "seed",
                    "warm_start", "tol_inner"), "optimizer")
    try:
        cfg.optimizer = OptimizerOptions(
            tol=_num(o.get("tol", 1e-5), "optimizer.tol"),
            max_iters=_int(o.get("max_iters", 50000), "optimizer.max_iters", 0),
            armijo_c=_num(o.get("armijo_c", 1e-4), "optimizer.armijo_c"),
            backtrack=_num(o.get("backtrack", 0.5), "optimizer.backtrack"),
            step0=_num(o.get("step0", 1.0), "optimizer.step0"),
            memory=_int(o.get("memory", 10), "optimizer.memory", 0),
            seed=_int(o.get("seed", 0), "optimizer.seed"),
        )
    except ValueError as exc:
        raise ConfigError(f"optimizer: {exc}") from exc
    cfg.warm_start = o.get("warm_start", "algorithm")
    if cfg.warm_start not in ("algorithm", "constant"):
        raise ConfigError("optimizer.warm_start must be 'algorithm' or 'constant'")
    cfg.tol_inner = _num(o.get("tol_inner", 1e-3), "optimizer.tol_inner")

    if "transport" in doc:
        t = _section(doc, "transport")
        _check_keys(t, ("eps", "mesh_n", "time_steps", "T", "bump_center", "bump_radius", "supg",
                        "lumped_mass", "control", "snapshot_times", "solution"), "transport")
        try:
            cfg.transport = TransportConfig(
                eps=_num(t.get("eps", 1e-5), "transport.eps"),
                mesh_n=_int(t.get("mesh_n", 128), "transport.mesh_n", 2),
                time_steps=_int(t.get("time_steps", 160), "transport.time_steps", 1),
                T=_num(t.get("T", 1.0), "transport.T"),
                bump_center=tuple(float(v) for v in _vec(t.get("bump_center", [-0.75, 0.0]), "transport.bump_center", 2)),
                bump_radius=_num(t.get("bump_radius", 0.2), "transport.bump_radius"),
                supg=bool(t.get("supg", True)),
                lumped_mass=bool(t.get("lumped_mass", False)),
                snapshot_times=tuple(float(v) for v in _vec(t.get("snapshot_times", [0.0, 0.5, 1.0]), "transport.snapshot_times")),
            )
        except ValueError as exc:
            raise ConfigError(f"transport: {exc}") from exc
        cfg.transport_control = t.get("control", "linear")
        if cfg.transport_control not in ("linear", "step"):
            raise ConfigError("transport.control must be 'linear' or 'step'")
        cfg.transport_solution = t.get("solution")

    if "field_dump" in doc:
        f = _section(doc, "field_dump")
        b = _vec(f.get("bounds", [-1.0, 1.0]), "field_dump.bounds", 2)
        cfg.field_dump = dict(bounds=(float(b[0]), float(b[1])), n=_int(f.get("n", 101), "field_dump.n", 2),
                              alpha=_vec_or_scalar(f.get("alpha", 1.0), "field_dump.alpha", n_p))

    r = _section(doc, "refine")
    levels = r.get("levels", [10, 20, 40, 80])
    cfg.refine_levels = tuple(_int(v, "refine.levels", 1) for v in levels)
    if any(b != 2 * a for a, b in zip(cfg.refine_levels, cfg.refine_levels[1:])):
        raise ConfigError("refine.levels must double from one level to the next")

    cfg.out_dir = _section(doc, "output").get("dir")
    return cfg


def parse_text(text, source="<string>"):
    try:
        return yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"{source}: parse error{line}: {exc.problem}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: parse error: {exc}") from exc


def preset_text(name):
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return resources.files("kelvintrack").joinpath("presets", f"{name}.yaml").read_text()


def load_preset(name):
    return build_config(parse_text(preset_text(name), f"preset:{name}"), f"preset:{name}")


def load_config(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"configuration file {path} does not exist")
    return build_config(parse_text(path.read_text(), str(path)), str(path))


def merge(base, override):
    """Recursive dict merge; ``override`` wins."""
    out = copy.deepcopy(base)
    for k, v in (override or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out
