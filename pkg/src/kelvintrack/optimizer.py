"""
Box-constrained minimization by projected limited-memory BFGS.

Each iteration splits the variables into an epsilon-active set (at or near a
bound with the gradient pushing outward) and a free set.  The free part of the
direction comes from the L-BFGS two-loop recursion applied to the free part of
the gradient; active components follow the negative gradient.  Trial points are
projected onto the box before evaluation and accepted by the Armijo rule along
the projected arc,

    f(P(x + t d)) <= f(x) + c * g^T (P(x + t d) - x).

Near a minimizer the decrease ``c * g^T s`` drops below the rounding error of
``f`` and the test above can no longer be decided from function values.  When
``f(P(x + t d))`` agrees with ``f(x)`` to rounding, the step is accepted on the
gradient form of the same condition (approximate Armijo of Hager and Zhang),

    g(P(x + t d))^T s <= (2c - 1) g^T s,    s = P(x + t d) - x,

which is equivalent to the Armijo rule for a quadratic along ``s``.

Curvature pairs with ``s^T y <= 0`` (relative) are discarded.
"""

import logging
import time
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

logger = logging.getLogger(__name__)

MAX_BACKTRACKS = 60
# relative size of the rounding error assumed in cost values
COST_ROUNDING = 1e3 * np.finfo(float).eps


class OptimizerError(RuntimeError):
    pass


@dataclass(frozen=True)
class OptimizerOptions:
    tol: float = 1e-5
    max_iters: int = 50000
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    step0: float = 1.0
    memory: int = 10
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.armijo_c < 1:
            raise ValueError("armijo_c must lie in (0, 1)")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack must lie in (0, 1)")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.memory < 0 or self.max_iters < 0:
            raise ValueError("memory and max_iters must be non-negative")


@dataclass
class RunReport:
    """Trace and outcome of one :func:`solve` call.

    ``costs[k]`` is the cost after ``k`` accepted iterations (``costs[0]`` is the
    starting cost).  The solution is a local minimizer at best: the problems
    solved here are non-convex and the result depends on the starting point.
    """

    x: np.ndarray
    cost: float
    converged: bool
    iterations: int
    residual: float
    costs: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    active: np.ndarray = None
    n_evals: int = 0
    wall_time: float = 0.0
    message: str = ""
    path: object = None
    start_cost: float = None
    final_time: float = None
    node_times: np.ndarray = None
    inner_iterations: int = None

    note = "local minimizer: non-convex problem, result depends on the starting point"


def project_box(x, lower, upper):
    """Componentwise ``min(upper, max(x, lower))``."""
    x = np.asarray(x, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if lower.shape != upper.shape or (lower.ndim and lower.shape != x.shape):
        raise ValueError(
            f"bound shapes {lower.shape}/{upper.shape} do not match x {x.shape}"
        )
    if np.any(lower > upper):
        raise ValueError("lower bound exceeds upper bound")
    return np.minimum(upper, np.maximum(x, lower))


def projected_gradient_residual(x, grad, lower, upper):
    """``|x - P(x - grad)|``; zero exactly at box-constrained stationary points."""
    x = np.asarray(x, dtype=float)
    return float(np.linalg.norm(x - project_box(x - np.asarray(grad, float), lower, upper)))


def _two_loop(g, pairs):
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * np.dot(s, q)
        alphas.append(a)
        q -= a * y
    s, y, _ = pairs[-1]
    q *= np.dot(s, y) / np.dot(y, y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * np.dot(y, q)
        q += (a - b) * s
    return q


def solve(fun, x0, lower, upper, opts=None, callback=None):
    """Minimize ``fun`` over the box ``[lower, upper]``.

    ``fun(x)`` returns ``(value, gradient)``.  ``x0`` must be feasible.
    Returns a :class:`RunReport`; ``converged`` is False when the iteration
    limit is hit or the line search fails.
    """
    opts = opts or OptimizerOptions()
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    x = np.array(x0, dtype=float)
    if np.any(x < lower) or np.any(x > upper):
        raise ValueError("starting point is not feasible")
    start = time.perf_counter()

    n_evals = 0

    def evaluate(z):
        nonlocal n_evals
        n_evals += 1
        val, grad = fun(z)
        val = float(val)
        grad = np.asarray(grad, dtype=float)
        if not np.isfinite(val) or not np.all(np.isfinite(grad)):
            raise OptimizerError("non-finite cost or gradient encountered")
        return val, grad

    f, g = evaluate(x)
    pairs = deque(maxlen=opts.memory) if opts.memory else None
    costs, residuals, steps = [f], [], []
    converged = False
    message = "iteration limit reached"
    it = 0

    while True:
        res = projected_gradient_residual(x, g, lower, upper)
        residuals.append(res)
        if res <= opts.tol:
            converged = True
            message = "projected gradient below tolerance"
            break
        if it >= opts.max_iters:
            break

        eps = min(1e-3, res)
        active = ((x - lower <= eps) & (g > 0)) | ((upper - x <= eps) & (g < 0))
        free = ~active

        directions = [-g]
        if pairs:
            qf = _two_loop(np.where(free, g, 0.0), pairs)
            d = np.where(free, -qf, -g)
            if np.dot(g[free], d[free]) < 0:
                directions.insert(0, d)

        accepted = None
        for direction in directions:
            t = opts.step0
            for _ in range(MAX_BACKTRACKS):
                xt = project_box(x + t * direction, lower, upper)
                decrease = float(np.dot(g, xt - x))
                if decrease < 0:
                    ft, gt = evaluate(xt)
                    if ft <= f + opts.armijo_c * decrease:
                        accepted = (xt, ft, gt, t)
                        break
                    if (ft <= f + COST_ROUNDING * abs(f)
                            and np.dot(gt, xt - x) <= (2 * opts.armijo_c - 1) * decrease):
                        accepted = (xt, ft, gt, t)
                        break
                t *= opts.backtrack
            if accepted is not None:
                break
            if pairs:
                pairs.clear()
        if accepted is None:
            message = "line search failed"
            break

        xt, ft, gt, t = accepted
        s = xt - x
        y = gt - g
        sy = float(np.dot(s, y))
        if pairs is not None and sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            pairs.append((s, y, 1.0 / sy))
        x, f, g = xt, ft, gt
        it += 1
        costs.append(f)
        steps.append(t)
        if callback is not None:
            callback(it, x, f, res)

    active_mask = ((x <= lower) & (g > 0)) | ((x >= upper) & (g < 0))
    report = RunReport(
        x=x, cost=f, converged=converged, iterations=it, residual=residuals[-1],
        costs=costs, residuals=residuals, steps=steps, active=active_mask,
        n_evals=n_evals, wall_time=time.perf_counter() - start, message=message,
        start_cost=costs[0],
    )
    logger.debug("solve: %s after %d iterations, cost %.6e, residual %.3e",
                 message, it, f, report.residual)
    return report


def solve_problem(problem, start_path, opts=None, callback=None):
    """Run :func:`solve` on a discrete problem from a starting :class:`ControlPath`."""
    lo, hi = problem.bounds()
    report = solve(problem.fun_and_grad, problem.pack(start_path), lo, hi, opts, callback)
    report.path = problem.unpack(report.x)
    if hasattr(problem, "final_time"):
        report.final_time, report.node_times = problem.final_time(report.path)
    return report


def _chain(step_fun, n_steps, z0, lower, upper, tol_inner, opts):
    inner = replace(opts or OptimizerOptions(), tol=tol_inner)
    z = np.array(z0, dtype=float)
    out = [z.copy()]
    total = 0
    for n in range(1, n_steps + 1):
        fun = step_fun(n, z)
        rep = solve(fun, project_box(z, lower, upper), lower, upper, inner)
        if not rep.converged:
            raise OptimizerError(f"initialization step {n} failed: {rep.message}")
        total += rep.iterations
        z = rep.x
        out.append(z.copy())
    return np.array(out), total


def warm_start_p1(problem, tol_inner=1e-3, opts=None):
    """Sequential one-step initialization for the fixed-time problem.

    Returns ``(path, total_inner_iterations)``.
    """
    vals, total = _chain(
        lambda n, z: problem.step_problem(n, z),
        problem.N, problem.alpha0, problem.lower, problem.upper, tol_inner, opts,
    )
    vals[0] = problem.alpha0
    path = problem.unpack(vals[1:].ravel())
    return path, total


def warm_start_p2(problem, tol_inner=1e-3, opts=None):
    """Sequential one-step initialization for the minimum-time problem.

    Returns ``(path, total_inner_iterations)``; the path carries the speed.
    """
    lo = np.append(problem.lower, problem.theta_lower)
    hi = np.append(problem.upper, problem.theta_upper)
    z0 = np.append(problem.alpha0, problem.theta0)
    vals, total = _chain(
        lambda m, z: problem.step_problem(m, z[:-1], z[-1]),
        problem.M, z0, lo, hi, tol_inner, opts,
    )
    alpha = vals[:, :-1].copy()
    theta = vals[:, -1].copy()
    alpha[0] = problem.alpha0
    theta[0] = problem.theta0
    return problem._path(alpha, theta), total
