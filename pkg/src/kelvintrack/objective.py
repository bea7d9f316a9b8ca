"""
Discrete tracking functionals for the fixed-time and minimum-time problems.

Controls are piecewise linear in the time (or arc-length) parameter and are
represented by their nodal values.  Node 0 is pinned to the initial condition;
the optimization variables are nodes ``1..N`` (flattened row-major), followed
by the free speed nodes ``1..M`` for the minimum-time problem.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .motion import pullback_P, time_averaged_target


class InfeasiblePathError(ValueError):
    """A control path violates its box bounds or pinned initial node."""


@dataclass
class ControlPath:
    """Nodal intensities on a uniform grid, optionally with a speed profile.

    ``values`` has shape ``(N+1, n_p)``.  ``speed`` (minimum-time problem only)
    has shape ``(M+1,)``.  ``grid`` holds the parameter nodes.
    """

    grid: np.ndarray
    values: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    speed: np.ndarray = None
    speed_bounds: tuple = None

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        n_p = self.values.shape[1]
        self.lower = np.broadcast_to(np.asarray(self.lower, dtype=float), (n_p,)).copy()
        self.upper = np.broadcast_to(np.asarray(self.upper, dtype=float), (n_p,)).copy()
        if self.speed is not None:
            self.speed = np.asarray(self.speed, dtype=float)

    @property
    def n_steps(self):
        return len(self.grid) - 1

    def check_feasible(self, alpha0=None, theta0=None, atol=0.0):
        if np.any(self.values < self.lower - atol) or np.any(self.values > self.upper + atol):
            raise InfeasiblePathError("intensities violate the box bounds")
        if alpha0 is not None and not np.array_equal(self.values[0], np.asarray(alpha0, float)):
            raise InfeasiblePathError("node 0 must equal the initial intensity alpha0")
        if self.speed is not None:
            lo, hi = self.speed_bounds
            if np.any(self.speed < lo - atol) or np.any(self.speed > hi + atol):
                raise InfeasiblePathError("speed violates its box bounds")
            if theta0 is not None and self.speed[0] != theta0:
                raise InfeasiblePathError("speed node 0 must equal theta0")

    def interpolate(self, p):
        """Piecewise-linear intensities at parameter(s) ``p``: shape ``p.shape + (n_p,)``."""
        p = np.asarray(p, dtype=float)
        cols = [np.interp(p, self.grid, self.values[:, j]) for j in range(self.values.shape[1])]
        return np.stack(cols, axis=-1)

    def refined(self, factor=2):
        """Linear interpolation onto a grid with ``factor`` times as many intervals."""
        fine = np.linspace(self.grid[0], self.grid[-1], factor * self.n_steps + 1)
        speed = None
        if self.speed is not None:
            speed = np.interp(fine, self.grid, self.speed)
        return replace(self, grid=fine, values=self.interpolate(fine), speed=speed)


def _safe_inverse(theta):
    theta = np.asarray(theta, dtype=float)
    if np.any(theta <= 0):
        raise ValueError("speed must be strictly positive")
    if np.any(theta < 1e-8):
        return (np.longdouble(1.0) / theta.astype(np.longdouble)).astype(float)
    return 1.0 / theta


def _forms(P_flat, alpha, q_shape):
    """Batched ``P alpha`` and ``alpha^T P alpha`` over leading node axis.

    ``P_flat`` is ``(L, Q*d*n, n)``; returns ``Pa (L, Q*d, n)`` and forms ``(L, Q, d)``.
    """
    L, _, n = P_flat.shape
    Pa = (P_flat @ alpha[:, :, None]).reshape(L, -1, n)
    forms = (Pa @ alpha[:, :, None])[..., 0].reshape((L,) + q_shape)
    return Pa, forms


def _weighted_contract(weighted_r, Pa):
    """``sum_{q,k} weighted_r[l,q,k] * Pa[l,(q,k),i]`` -> ``(L, n)``."""
    L = Pa.shape[0]
    return (weighted_r.reshape(L, 1, -1) @ Pa)[:, 0, :]


def recover_final_time(speed, kappa):
    """Physical times of the arc-length nodes under a piecewise-linear speed.

    Returns ``(T_F, t)`` where ``t[i] = t[i-1] + 2 kappa / (theta[i] + theta[i-1])``.
    """
    speed = np.asarray(speed, dtype=float)
    if np.any(speed <= 0):
        raise ValueError("speed must be strictly positive to recover the final time")
    dt = 2.0 * kappa / (speed[1:] + speed[:-1])
    t = np.concatenate([[0.0], np.cumsum(dt)])
    return float(t[-1]), t


@dataclass
class Problem1:
    """Fixed final time: track ``target`` on ``law``'s moving disk over ``[0, T]``."""

    dipoles: object
    law: object
    target: object
    quad: object
    T: float = 1.0
    N: int = 80
    lam: float = 1e-5
    alpha0: np.ndarray = None
    lower: np.ndarray = -2.0
    upper: np.ndarray = 2.0
    P_hat: np.ndarray = field(init=False, repr=False)
    f_hat: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("control cost lambda must be positive")
        if self.N < 1 or self.T <= 0:
            raise ValueError("need N >= 1 and T > 0")
        if self.law.kind != "time":
            raise ValueError("Problem1 needs a time-parametrized motion law")
        n_p = self.dipoles.n_p
        self.lower = np.broadcast_to(np.asarray(self.lower, float), (n_p,)).copy()
        self.upper = np.broadcast_to(np.asarray(self.upper, float), (n_p,)).copy()
        if np.any(self.lower > self.upper):
            raise ValueError("bounds must satisfy alpha_lower <= alpha_upper")
        if self.alpha0 is None:
            self.alpha0 = np.ones(n_p)
        self.alpha0 = np.broadcast_to(np.asarray(self.alpha0, float), (n_p,)).copy()
        tau = self.tau
        self.P_hat = np.stack(
            [pullback_P(self.dipoles, self.law, n * tau, self.quad) for n in range(1, self.N + 1)]
        )
        self.f_hat = np.stack(
            [time_averaged_target(self.target, self.law, n, tau, self.quad) for n in range(1, self.N + 1)]
        )
        self._P_flat = self.P_hat.reshape(self.N, -1, self.n_p)

    @property
    def tau(self):
        return self.T / self.N

    @property
    def n_p(self):
        return self.dipoles.n_p

    @property
    def grid(self):
        return np.linspace(0.0, self.T, self.N + 1)

    # -- free-variable packing --------------------------------------------
    @property
    def n_free(self):
        return self.N * self.n_p

    def bounds(self):
        return np.tile(self.lower, self.N), np.tile(self.upper, self.N)

    def pack(self, path):
        return path.values[1:].ravel().copy()

    def unpack(self, x):
        values = np.vstack([self.alpha0, np.asarray(x, float).reshape(self.N, self.n_p)])
        return ControlPath(self.grid, values, self.lower, self.upper)

    def constant_path(self, value=None):
        value = self.alpha0 if value is None else np.broadcast_to(value, (self.n_p,))
        values = np.tile(value, (self.N + 1, 1))
        values[0] = self.alpha0
        return ControlPath(self.grid, values, self.lower, self.upper)

    # -- functional ---------------------------------------------------------
    def _residual(self, alpha):
        Pa, forms = _forms(self._P_flat, alpha, self.f_hat.shape[1:])
        return forms - self.f_hat, Pa

    def parts(self, path):
        """Return ``(J1, J2)``: tracking and control-cost contributions."""
        path.check_feasible(self.alpha0)
        alpha = path.values
        r, _ = self._residual(alpha[1:])
        J1 = 0.5 * self.tau * float(np.einsum("q,nqk->", self.quad.weights, r**2))
        J2 = 0.5 * self.lam / self.tau * float(np.sum(np.diff(alpha, axis=0) ** 2))
        return J1, J2

    def value(self, path):
        J1, J2 = self.parts(path)
        return J1 + J2

    def gradient(self, path):
        """Gradient w.r.t. free nodes ``1..N``, shape ``(N, n_p)``."""
        path.check_feasible(self.alpha0)
        return self._value_grad(path.values)[1]

    def _value_grad(self, alpha):
        r, Pa = self._residual(alpha[1:])
        w = self.quad.weights
        J1 = 0.5 * self.tau * float(np.einsum("q,nqk->", w, r**2))
        g = 2.0 * self.tau * _weighted_contract(r * w[None, :, None], Pa)
        inc = np.diff(alpha, axis=0)  # inc[n-1] = alpha^n - alpha^{n-1}
        J2 = 0.5 * self.lam / self.tau * float(np.sum(inc**2))
        pen = inc.copy()
        pen[:-1] -= inc[1:]
        g += (self.lam / self.tau) * pen
        return J1 + J2, g

    def fun_and_grad(self, x):
        alpha = np.vstack([self.alpha0, np.asarray(x, float).reshape(self.N, self.n_p)])
        f, g = self._value_grad(alpha)
        return f, g.ravel()

    # -- one-step subproblem (initialization chain) -------------------------
    def step_problem(self, n, x_prev):
        """Objective of the single-step problem at node ``n`` anchored at ``x_prev``."""
        P = self.P_hat[n - 1]
        f_hat = self.f_hat[n - 1]
        w = self.quad.weights
        c = self.lam / self.tau**2
        x_prev = np.asarray(x_prev, float)

        def fun(x):
            Pa = np.einsum("qkij,j->qki", P, x)
            r = np.einsum("qki,i->qk", Pa, x) - f_hat
            val = 0.5 * float(np.einsum("q,qk->", w, r**2)) + 0.5 * c * float(np.sum((x - x_prev) ** 2))
            grad = 2.0 * np.einsum("q,qk,qki->i", w, r, Pa) + c * (x - x_prev)
            return val, grad

        return fun


@dataclass
class Problem2:
    """Minimum final time in arc-length form: intensities and speed along ``law``."""

    dipoles: object
    law: object
    quad: object
    M: int = 80
    lam: float = 1e-6
    eta: float = 1e-4
    beta: float = 0.1
    alpha0: np.ndarray = None
    theta0: float = 1e-6
    lower: np.ndarray = -1.0
    upper: np.ndarray = 1.0
    theta_lower: float = 1e-10
    theta_upper: float = 10.0
    P_tilde: np.ndarray = field(init=False, repr=False)
    tangent: np.ndarray = field(init=False, repr=False)
    scale_factor: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if min(self.lam, self.eta, self.beta) <= 0:
            raise ValueError("lambda, eta and beta must be positive")
        if self.law.kind != "arc":
            raise ValueError("Problem2 needs an arc-length motion law")
        if not 0 < self.theta_lower <= self.theta_upper:
            raise ValueError("speed bounds must satisfy 0 < theta_lower <= theta_upper")
        n_p = self.dipoles.n_p
        self.lower = np.broadcast_to(np.asarray(self.lower, float), (n_p,)).copy()
        self.upper = np.broadcast_to(np.asarray(self.upper, float), (n_p,)).copy()
        if np.any(self.lower > self.upper):
            raise ValueError("bounds must satisfy alpha_lower <= alpha_upper")
        if self.alpha0 is None:
            self.alpha0 = np.full(n_p, 1e-6)
        self.alpha0 = np.broadcast_to(np.asarray(self.alpha0, float), (n_p,)).copy()
        s = self.grid[1:]
        self.P_tilde = np.stack([pullback_P(self.dipoles, self.law, sm, self.quad) for sm in s])
        self.tangent = self.law.path.derivative(s)
        self.scale_factor = self.law.scale.value(s) ** (self.law.dim / 2.0)
        self._P_flat = self.P_tilde.reshape(self.M, -1, n_p)

    @property
    def s_F(self):
        return self.law.end

    @property
    def kappa(self):
        return self.s_F / self.M

    @property
    def n_p(self):
        return self.dipoles.n_p

    @property
    def grid(self):
        return np.linspace(0.0, self.s_F, self.M + 1)

    @property
    def n_free(self):
        return self.M * (self.n_p + 1)

    def bounds(self):
        lo = np.concatenate([np.tile(self.lower, self.M), np.full(self.M, self.theta_lower)])
        hi = np.concatenate([np.tile(self.upper, self.M), np.full(self.M, self.theta_upper)])
        return lo, hi

    def pack(self, path):
        return np.concatenate([path.values[1:].ravel(), path.speed[1:]])

    def _split(self, x):
        x = np.asarray(x, float)
        k = self.M * self.n_p
        alpha = np.vstack([self.alpha0, x[:k].reshape(self.M, self.n_p)])
        theta = np.concatenate([[self.theta0], x[k:]])
        return alpha, theta

    def unpack(self, x):
        alpha, theta = self._split(x)
        return self._path(alpha, theta)

    def _path(self, alpha, theta):
        return ControlPath(
            self.grid, alpha, self.lower, self.upper, speed=theta,
            speed_bounds=(self.theta_lower, self.theta_upper),
        )

    def constant_path(self, value=None, speed=None):
        value = self.alpha0 if value is None else np.broadcast_to(value, (self.n_p,))
        alpha = np.tile(value, (self.M + 1, 1))
        alpha[0] = self.alpha0
        theta = np.full(self.M + 1, self.theta0 if speed is None else speed, dtype=float)
        theta[0] = self.theta0
        return self._path(alpha, theta)

    def _terms(self, alpha, theta):
        a = alpha[1:]
        th = theta[1:]
        Pa, quad_form = _forms(self._P_flat, a, self.P_tilde.shape[1:3])
        goal = self.tangent * (th * self.scale_factor)[:, None]  # (M, d)
        r = quad_form - goal[:, None, :]
        sq = np.einsum("q,mqk->m", self.quad.weights, r**2)
        return Pa, r, sq

    def parts(self, path):
        """Return ``(F1, F2, F3, F4)``."""
        path.check_feasible(self.alpha0, self.theta0)
        alpha, theta = path.values, path.speed
        return self._parts(alpha, theta)

    def _parts(self, alpha, theta):
        k = self.kappa
        inv = _safe_inverse(theta[1:])
        _, _, sq = self._terms(alpha, theta)
        F1 = float(np.sum(0.5 * k * inv * sq))
        F2 = float(np.sum(self.beta * k * inv))
        F3 = 0.5 * self.lam / k * float(np.sum(np.diff(alpha, axis=0) ** 2))
        F4 = 0.5 * self.eta / k * float(np.sum(np.diff(theta) ** 2))
        return F1, F2, F3, F4

    def value(self, path):
        return sum(self.parts(path))

    def _value_grad(self, alpha, theta):
        k = self.kappa
        w = self.quad.weights
        inv = _safe_inverse(theta[1:])
        Pa, r, sq = self._terms(alpha, theta)
        F1 = float(np.sum(0.5 * k * inv * sq))
        F2 = float(np.sum(self.beta * k * inv))
        inc_a = np.diff(alpha, axis=0)
        inc_t = np.diff(theta)
        F3 = 0.5 * self.lam / k * float(np.sum(inc_a**2))
        F4 = 0.5 * self.eta / k * float(np.sum(inc_t**2))

        ga = 2.0 * k * inv[:, None] * _weighted_contract(r * w[None, :, None], Pa)
        pen_a = inc_a.copy()
        pen_a[:-1] -= inc_a[1:]
        ga += (self.lam / k) * pen_a

        # d/dtheta of the residual is -tangent * scale_factor
        cross = np.einsum("q,mqk,mk->m", w, r, self.tangent) * self.scale_factor
        gt = -0.5 * k * inv**2 * sq - k * inv * cross - self.beta * k * inv**2
        pen_t = inc_t.copy()
        pen_t[:-1] -= inc_t[1:]
        gt += (self.eta / k) * pen_t
        return (F1, F2, F3, F4), ga, gt

    def gradient(self, path):
        """``(grad_alpha (M, n_p), grad_theta (M,))`` w.r.t. free nodes."""
        path.check_feasible(self.alpha0, self.theta0)
        _, ga, gt = self._value_grad(path.values, path.speed)
        return ga, gt

    def fun_and_grad(self, x):
        alpha, theta = self._split(x)
        parts, ga, gt = self._value_grad(alpha, theta)
        return sum(parts), np.concatenate([ga.ravel(), gt])

    def final_time(self, path):
        return recover_final_time(path.speed, self.kappa)

    def step_problem(self, m, x_prev, y_prev):
        """Single-step objective at node ``m`` over ``z = (x, y)``."""
        P = self.P_tilde[m - 1]
        tangent = self.tangent[m - 1]
        sf = self.scale_factor[m - 1]
        w = self.quad.weights
        k2 = self.kappa**2
        x_prev = np.asarray(x_prev, float)

        def fun(z):
            x, y = z[:-1], float(z[-1])
            inv = float(_safe_inverse(np.array([y]))[0])
            Pa = np.einsum("qkij,j->qki", P, x)
            r = np.einsum("qki,i->qk", Pa, x) - tangent * y * sf
            sq = float(np.einsum("q,qk->", w, r**2))
            val = (
                0.5 * inv * sq + self.beta * inv
                + 0.5 * self.lam / k2 * float(np.sum((x - x_prev) ** 2))
                + 0.5 * self.eta / k2 * (y - y_prev) ** 2
            )
            gx = 2.0 * inv * np.einsum("q,qk,qki->i", w, r, Pa) + self.lam / k2 * (x - x_prev)
            cross = float(np.einsum("q,qk,k->", w, r, tangent)) * sf
            gy = -0.5 * inv**2 * sq - inv * cross - self.beta * inv**2 + self.eta / k2 * (y - y_prev)
            return val, np.concatenate([gx, [gy]])

        return fun
