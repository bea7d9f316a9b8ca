"""
Run orchestration shared by the command line and the estimator facade.

Each ``run_*`` function takes a validated :class:`~kelvintrack.config.RunConfig`,
does the numerical work and, when ``out_dir`` is given, writes the result files
described in :mod:`kelvintrack.export`.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import export
from .config import ConfigError, load_preset
from .field import force_grid
from .objective import Problem1, Problem2
from .optimizer import RunReport, solve_problem, warm_start_p1, warm_start_p2
from .transport import run_transport

logger = logging.getLogger(__name__)


def build_problem1(cfg, N=None):
    if cfg.problem1 is None or cfg.law is None or cfg.target is None:
        raise ConfigError("solve-p1 needs 'motion', 'target' and 'problem1' sections")
    p = cfg.problem1
    return Problem1(cfg.dipoles, cfg.law, cfg.target, cfg.quad, T=p["T"], N=N or p["N"],
                    lam=p["lam"], alpha0=p["alpha0"], lower=p["lower"], upper=p["upper"])


def build_problem2(cfg):
    if cfg.problem2 is None or cfg.law is None:
        raise ConfigError("solve-p2 needs 'motion' and 'problem2' sections")
    p = cfg.problem2
    return Problem2(cfg.dipoles, cfg.law, cfg.quad, M=p["M"], lam=p["lam"], eta=p["eta"],
                    beta=p["beta"], alpha0=p["alpha0"], theta0=p["theta0"], lower=p["lower"],
                    upper=p["upper"], theta_lower=p["theta_lower"], theta_upper=p["theta_upper"])


@dataclass
class SolveResult:
    problem: object
    report: RunReport
    start_path: object
    start_cost: float
    warm_start: str
    warm_iterations: int = 0
    files: dict = field(default_factory=dict)

    @property
    def path(self):
        return self.report.path

    def summary(self, kind):
        parts = self.problem.parts(self.report.path)
        names = ("J1", "J2") if kind == "p1" else ("F1", "F2", "F3", "F4")
        return {
            "problem": kind,
            "cost": self.report.cost,
            "parts": dict(zip(names, parts)),
            "converged": self.report.converged,
            "message": self.report.message,
            "iterations": self.report.iterations,
            "residual": self.report.residual,
            "warm_start": self.warm_start,
            "warm_start_cost": self.start_cost,
            "warm_start_iterations": self.warm_iterations,
            "start_cost": self.report.start_cost,
            "final_time": self.report.final_time,
            "n_evals": self.report.n_evals,
            "note": RunReport.note,
        }


def _start(problem, cfg, warm):
    if cfg.warm_start == "constant":
        return problem.constant_path(), 0
    return warm(problem, cfg.tol_inner, cfg.optimizer)


def solve_p1(cfg, out_dir=None, problem=None, start=None, callback=None):
    problem = problem or build_problem1(cfg)
    if start is None:
        start, inner = _start(problem, cfg, warm_start_p1)
        label = cfg.warm_start
    else:
        inner, label = 0, "given"
    start_cost = problem.value(start)
    report = solve_problem(problem, start, cfg.optimizer, callback)
    res = SolveResult(problem, report, start, start_cost, label, inner)
    if out_dir is not None:
        out = Path(out_dir)
        res.files["intensities"] = export.write_intensities(out / "intensities.csv", report.path)
        res.files["trace"] = export.write_trace(out / "trace.csv", report)
        res.files["summary"] = export.write_summary(out / "summary.json", res.summary("p1"))
    return res


def solve_p2(cfg, out_dir=None, problem=None, start=None, callback=None):
    problem = problem or build_problem2(cfg)
    if start is None:
        start, inner = _start(problem, cfg, warm_start_p2)
        label = cfg.warm_start
    else:
        inner, label = 0, "given"
    start_cost = problem.value(start)
    report = solve_problem(problem, start, cfg.optimizer, callback)
    res = SolveResult(problem, report, start, start_cost, label, inner)
    if out_dir is not None:
        out = Path(out_dir)
        res.files["intensities"] = export.write_intensities(out / "intensities.csv", report.path, "s")
        res.files["speed"] = export.write_speed(out / "speed.csv", report.path, report.node_times)
        res.files["trace"] = export.write_trace(out / "trace.csv", report)
        res.files["summary"] = export.write_summary(out / "summary.json", res.summary("p2"))
    return res


def transport_control(cfg, problem=None):
    """Control path replayed by the transport run: a saved table or a fresh solve."""
    problem = problem or build_problem1(cfg)
    if cfg.transport_solution:
        src = Path(cfg.transport_solution)
        if not src.is_absolute() and cfg.source and not cfg.source.startswith("preset:"):
            src = Path(cfg.source).parent / src
        path = export.read_intensities(src, problem.lower, problem.upper)
        return path, None
    res = solve_p1(cfg, problem=problem)
    return res.path, res


def run_transport_cfg(cfg, out_dir=None, control=None, callback=None):
    if cfg.transport is None:
        raise ConfigError("transport needs a 'transport' section")
    solve_res = None
    if control is None:
        control, solve_res = transport_control(cfg)
    result = run_transport(cfg.transport, cfg.dipoles, control, cfg.law,
                           control=cfg.transport_control, callback=callback)
    files = {}
    if out_dir is not None:
        out = Path(out_dir)
        files["transport"] = export.write_transport(out / "transport.csv", result)
        for t, c in sorted(result.snapshots.items()):
            name = f"snapshot_t{export.fmt(t)}.csv"
            files[name] = export.write_snapshot(out / name, result.mesh.nodes, c)
        if solve_res is not None:
            files["intensities"] = export.write_intensities(out / "intensities.csv", solve_res.path)
            files["summary"] = export.write_summary(out / "summary.json", solve_res.summary("p1"))
    return result, solve_res, files


def run_field_dump(cfg, out_dir=None):
    spec = cfg.field_dump or dict(bounds=(-1.0, 1.0), n=101, alpha=np.ones(cfg.dipoles.n_p))
    grid = force_grid(cfg.dipoles, spec["alpha"], spec["bounds"], spec["n"])
    files = {}
    if out_dir is not None:
        files["field_grid"] = export.write_field_grid(Path(out_dir) / "field_grid.csv", grid)
    return grid, files


def fd_relative_error(fun, x, rng, n_coords=30, h=1e-6):
    """max |g_i - fd_i| / max |fd_i| over randomly chosen coordinates."""
    f0, g = fun(x)
    idx = rng.choice(len(x), size=min(n_coords, len(x)), replace=False)
    fd = np.empty(len(idx))
    for k, i in enumerate(idx):
        e = np.zeros_like(x)
        e[i] = h
        fd[k] = (fun(x + e)[0] - fun(x - e)[0]) / (2 * h)
    return float(np.max(np.abs(g[idx] - fd)) / max(np.max(np.abs(fd)), 1e-300))


def interior_point(problem, rng, margin=0.1):
    lo, hi = problem.bounds()
    lo = np.maximum(lo, -2.0)
    hi = np.minimum(hi, 2.0)
    x = rng.uniform(lo + margin * (hi - lo), hi - margin * (hi - lo))
    if isinstance(problem, Problem2):
        x[-problem.M:] = rng.uniform(0.5, 2.0, problem.M)
    return x


def check_gradients(cfg, seeds=(0, 1, 2, 3, 4), n_coords=30):
    """Max relative finite-difference error of the J and F gradients.

    Problems missing from ``cfg`` are taken from the bundled presets.
    """
    p1 = build_problem1(cfg) if cfg.problem1 is not None else build_problem1(load_preset("paper_p1_f1"))
    p2 = build_problem2(cfg) if cfg.problem2 is not None else build_problem2(load_preset("paper_p2"))
    out = {}
    for name, prob in (("J", p1), ("F", p2)):
        errs = []
        for s in seeds:
            rng = np.random.default_rng([cfg.optimizer.seed, s])
            errs.append(fd_relative_error(prob.fun_and_grad, interior_point(prob, rng), rng, n_coords))
        out[name] = max(errs)
    return out


def refine_study(cfg, levels=None, out_dir=None):
    """Optimized costs on nested grids; each level starts from the previous solution."""
    levels = levels or cfg.refine_levels
    rows = []
    prev = None
    for N in levels:
        problem = build_problem1(cfg, N=N)
        if prev is None:
            res = solve_p1(cfg, problem=problem)
        else:
            factor = N // prev.n_steps
            start = prev.refined(factor)
            start.values[0] = problem.alpha0
            res = solve_p1(cfg, problem=problem, start=start)
        rows.append(dict(N=N, cost=res.report.cost, iterations=res.report.iterations,
                         residual=res.report.residual, converged=res.report.converged))
        prev = res.path
    for a, b in zip(rows, rows[1:]):
        b["gap"] = abs(b["cost"] - a["cost"])
    rows[0]["gap"] = float("nan")
    files = {}
    if out_dir is not None:
        files["refine"] = export.write_csv(
            Path(out_dir) / "refine.csv", ["N", "cost", "iterations", "residual", "converged", "gap"],
            ([r["N"], r["cost"], r["iterations"], r["residual"], r["converged"], r["gap"]] for r in rows),
        )
    return rows, files
