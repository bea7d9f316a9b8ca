"""
Result files.  Column orders and JSON keys are part of the plotting contract:

    intensities.csv   t, alpha_1, ..., alpha_n          (s, alpha_... for the arc problem)
    speed.csv         s, theta, t
    trace.csv         iteration, cost, residual, step
    summary.json      see ``SUMMARY_KEYS``
    field_grid.csv    x, y, Hx, Hy, Fx, Fy, logF
    transport.csv     time, mass, containment, c_min, c_max
    snapshot_*.csv    x, y, c
    refine.csv        N, cost, iterations, residual, converged, gap

Floats in CSV files are written with 17 significant digits; JSON floats use
the shortest repr that round-trips exactly.  Nothing time- or host-dependent
is written, so identical runs give identical bytes.
"""

import csv
import json
import math
from pathlib import Path

import numpy as np

from .objective import ControlPath

SUMMARY_KEYS = (
    "problem", "cost", "parts", "converged", "message", "iterations", "residual",
    "warm_start", "warm_start_cost", "warm_start_iterations", "start_cost",
    "final_time", "n_evals", "note",
)


def fmt(v):
    """17-significant-digit decimal text."""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.17g}"


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path):
    with Path(path).open(newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        data = np.array([[float(v) for v in row] for row in r if row])
    return header, data


def write_intensities(path, control, param="t"):
    n_p = control.values.shape[1]
    header = [param] + [f"alpha_{i + 1}" for i in range(n_p)]
    rows = (np.concatenate([[p], a]) for p, a in zip(control.grid, control.values))
    return write_csv(path, header, rows)


def read_intensities(path, lower=-np.inf, upper=np.inf):
    """Reload an intensities CSV as a :class:`ControlPath` (no speed)."""
    header, data = read_csv(path)
    if not header or not header[0] in ("t", "s") or len(header) < 2:
        raise ValueError(f"{path}: not an intensities table")
    return ControlPath(data[:, 0], data[:, 1:], lower, upper)


def write_speed(path, control, node_times):
    rows = zip(control.grid, control.speed, node_times)
    return write_csv(path, ["s", "theta", "t"], rows)


def write_trace(path, report):
    steps = [float("nan")] + list(report.steps)
    rows = ((k, c, r, s) for k, (c, r, s) in enumerate(zip(report.costs, report.residuals, steps)))
    return write_csv(path, ["iteration", "cost", "residual", "step"], rows)


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    return v


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(obj), indent=2) + "\n")
    return path


def write_summary(path, summary):
    missing = [k for k in SUMMARY_KEYS if k not in summary]
    if missing:
        raise KeyError(f"summary lacks keys {missing}")
    ordered = {k: summary[k] for k in SUMMARY_KEYS}
    ordered.update({k: v for k, v in summary.items() if k not in ordered})
    return write_json(path, ordered)


def write_field_grid(path, grid):
    cols = ("x", "y", "Hx", "Hy", "Fx", "Fy", "logF")
    rows = zip(*(np.ravel(grid[c]) for c in cols))
    return write_csv(path, cols, rows)


def write_transport(path, result):
    return write_csv(path, ["time", "mass", "containment", "c_min", "c_max"], result.rows())


def write_snapshot(path, nodes, c):
    return write_csv(path, ["x", "y", "c"], ((x, y, v) for (x, y), v in zip(nodes, c)))
