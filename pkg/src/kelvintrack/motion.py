"""
Moving target subdomains and their pull-back onto a fixed reference disk.

A subdomain ``D_t`` is the affine image ``X(t, xhat) = phi(t) + psi(t) xhat`` of
a reference disk ``Dhat``.  For the minimum-time problem the same map is
parametrized by arc length, ``X(s, xhat) = rho(s) + psi(s) xhat`` with a
unit-speed curve ``rho``.  Integrals over ``D_t`` are computed on ``Dhat`` with
a fixed quadrature rule; the Jacobian ``psi^d`` is split as ``psi^(d/2)`` onto
each factor of the squared tracking residual.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import roots_legendre

from .field import eval_P


class ParameterRangeError(ValueError):
    """Raised when a motion law is evaluated outside its parameter domain."""


# --------------------------------------------------------------------------
# Parametric curves.  ``value(t)`` returns shape ``t.shape + (dim,)`` for vector
# curves and ``t.shape`` for scalar curves; ``derivative`` likewise.
# --------------------------------------------------------------------------


class Curve:
    dim = None  # None for scalar curves

    def value(self, t):
        raise NotImplementedError

    def derivative(self, t):
        raise NotImplementedError

    def _shape(self, arr):
        return arr if self.dim is not None else arr[..., 0]


@dataclass(frozen=True)
class Constant(Curve):
    """``c(t) = c``; ``c`` may be a scalar or a vector."""

    c: object

    def __post_init__(self):
        object.__setattr__(self, "_c", np.atleast_1d(np.asarray(self.c, dtype=float)))

    @property
    def dim(self):
        return None if np.ndim(self.c) == 0 else len(self._c)

    def value(self, t):
        t = np.asarray(t, dtype=float)
        return self._shape(np.broadcast_to(self._c, t.shape + self._c.shape).copy())

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        return self._shape(np.zeros(t.shape + self._c.shape))


@dataclass(frozen=True)
class LineSegment(Curve):
    """``c(t) = start + t * velocity`` (scalar or vector)."""

    start: object
    velocity: object

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.start, dtype=float))
        v = np.atleast_1d(np.asarray(self.velocity, dtype=float))
        if a.shape != v.shape:
            raise ValueError("start and velocity must have the same shape")
        object.__setattr__(self, "_a", a)
        object.__setattr__(self, "_v", v)

    @property
    def dim(self):
        return None if np.ndim(self.start) == 0 else len(self._a)

    @classmethod
    def between(cls, start, end, unit_speed=True):
        """Straight line from ``start`` to ``end`` with unit speed (arc length)."""
        start = np.asarray(start, dtype=float)
        delta = np.asarray(end, dtype=float) - start
        length = np.linalg.norm(delta)
        if not unit_speed:
            return cls(start, delta)
        return cls(start, delta / length)

    def value(self, t):
        t = np.asarray(t, dtype=float)
        return self._shape(self._a + t[..., None] * self._v)

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        return self._shape(np.broadcast_to(self._v, t.shape + self._v.shape).copy())


@dataclass(frozen=True)
class CircularArc(Curve):
    """``c(t) = center + radius * (cos(phase + rate t), sin(phase + rate t))``."""

    center: object
    radius: float
    phase: float
    rate: float

    dim = 2

    def value(self, t):
        t = np.asarray(t, dtype=float)
        ang = self.phase + self.rate * t
        return np.asarray(self.center, dtype=float) + self.radius * np.stack(
            [np.cos(ang), np.sin(ang)], axis=-1
        )

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        ang = self.phase + self.rate * t
        return self.radius * self.rate * np.stack([-np.sin(ang), np.cos(ang)], axis=-1)


@dataclass(frozen=True)
class Tabulated(Curve):
    """Piecewise-linear interpolant through ``(knots, values)``.

    The derivative is the slope of the containing interval; at an interior
    knot the slope of the interval to its left is used.
    """

    knots: object
    values: object

    def __post_init__(self):
        k = np.asarray(self.knots, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if k.ndim != 1 or len(k) < 2 or np.any(np.diff(k) <= 0):
            raise ValueError("knots must be a strictly increasing 1-D array of length >= 2")
        if v.shape[0] != len(k):
            raise ValueError("values must have one row per knot")
        object.__setattr__(self, "_k", k)
        object.__setattr__(self, "_v", v.reshape(len(k), -1))

    @property
    def dim(self):
        return None if np.ndim(self.values) == 1 else self._v.shape[1]

    def _locate(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < self._k[0] - 1e-12) or np.any(t > self._k[-1] + 1e-12):
            raise ParameterRangeError(
                f"parameter outside tabulated range [{self._k[0]}, {self._k[-1]}]"
            )
        idx = np.clip(np.searchsorted(self._k, t, side="left") - 1, 0, len(self._k) - 2)
        return t, idx

    def value(self, t):
        t, idx = self._locate(t)
        k0, k1 = self._k[idx], self._k[idx + 1]
        w = ((t - k0) / (k1 - k0))[..., None]
        return self._shape((1 - w) * self._v[idx] + w * self._v[idx + 1])

    def derivative(self, t):
        t, idx = self._locate(t)
        slope = (self._v[idx + 1] - self._v[idx]) / (self._k[idx + 1] - self._k[idx])[..., None]
        return self._shape(slope)


# --------------------------------------------------------------------------
# Reference disk and its quadrature
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DiskQuadrature:
    """Quadrature nodes ``(Q, 2)`` and positive weights ``(Q,)`` on a disk."""

    center: np.ndarray
    radius: float
    nodes: np.ndarray
    weights: np.ndarray
    n_r: int
    n_phi: int

    @property
    def area(self):
        return np.pi * self.radius**2

    @property
    def degree(self):
        """Total polynomial degree integrated exactly."""
        return min(2 * self.n_r - 2, self.n_phi - 1)

    def integrate(self, values):
        """Integrate nodal ``values`` (node axis first)."""
        return np.tensordot(self.weights, values, axes=(0, 0))


def build_disk_quadrature(radius, center=(0.0, 0.0), n_r=8, n_phi=16):
    """Polar tensor rule: Gauss-Legendre in ``r`` (weight ``r``), trapezoid in angle.

    Nodes are ordered radius-major (all angles of the innermost ring first).
    """
    if n_r < 1 or n_phi < 1:
        raise ValueError("n_r and n_phi must be >= 1")
    if radius <= 0:
        raise ValueError("disk radius must be positive")
    center = np.asarray(center, dtype=float)
    xi, wi = roots_legendre(n_r)
    r = 0.5 * radius * (xi + 1.0)
    wr = 0.5 * radius * wi * r
    ang = np.arange(n_phi) * (2.0 * np.pi / n_phi)
    wa = np.full(n_phi, 2.0 * np.pi / n_phi)
    R, A = np.meshgrid(r, ang, indexing="ij")
    nodes = center + np.column_stack([(R * np.cos(A)).ravel(), (R * np.sin(A)).ravel()])
    weights = np.outer(wr, wa).ravel()
    for arr in (nodes, weights, center):
        arr.setflags(write=False)
    return DiskQuadrature(center, float(radius), nodes, weights, n_r, n_phi)


# --------------------------------------------------------------------------
# Motion laws
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MotionLaw:
    """Affine motion ``X(p, xhat) = path(p) + scale(p) * xhat`` for ``p in [0, end]``.

    ``kind`` is ``"time"`` (``path = phi``, ``end = T``) or ``"arc"``
    (``path = rho`` with unit speed, ``end = s_F``).
    """

    kind: str
    path: Curve
    scale: Curve
    end: float
    disk_center: tuple = (0.0, 0.0)
    disk_radius: float = 0.2

    def __post_init__(self):
        if self.kind not in ("time", "arc"):
            raise ValueError(f"unknown motion kind {self.kind!r}")
        if self.end <= 0:
            raise ValueError("motion law end parameter must be positive")
        if self.disk_radius <= 0:
            raise ValueError("reference disk radius must be positive")

    @property
    def dim(self):
        return len(self.disk_center)

    def _check(self, p):
        p = np.asarray(p, dtype=float)
        if np.any(p < -1e-12) or np.any(p > self.end * (1 + 1e-12)):
            raise ParameterRangeError(f"parameter outside [0, {self.end}]")
        return p

    def map_point(self, p, xhat):
        """Image of reference points ``xhat (..., d)`` at scalar parameter ``p``."""
        p = self._check(p)
        return self.path.value(p) + self.scale.value(p) * np.asarray(xhat, dtype=float)

    def jacobian_det(self, p):
        return self.scale.value(self._check(p)) ** self.dim

    def center_at(self, p):
        return self.map_point(p, np.asarray(self.disk_center, dtype=float))

    def radius_at(self, p):
        return self.disk_radius * self.scale.value(self._check(p))

    def check_unit_speed(self, params, tol=1e-10):
        speed = np.linalg.norm(self.path.derivative(np.asarray(params, dtype=float)), axis=-1)
        bad = np.abs(speed - 1.0) > tol
        if np.any(bad):
            raise ValueError(
                f"arc-length curve has |rho'| != 1 at {int(bad.sum())} grid nodes "
                f"(max deviation {np.max(np.abs(speed - 1.0)):.3e})"
            )

    def check_containment(self, params, quad, domain_center=(0.0, 0.0), domain_radius=1.0):
        """Raise unless the mapped disk boundary stays strictly inside the domain ball.

        The boundary is sampled at the quadrature angles.
        """
        ang = np.arange(quad.n_phi) * (2.0 * np.pi / quad.n_phi)
        ring = np.asarray(self.disk_center) + self.disk_radius * np.column_stack(
            [np.cos(ang), np.sin(ang)]
        )
        for p in np.atleast_1d(params):
            pts = self.map_point(p, ring)
            dist = np.linalg.norm(pts - np.asarray(domain_center), axis=1)
            if np.any(dist >= domain_radius):
                raise ValueError(
                    f"moving subdomain leaves the domain at parameter {p:.6g} "
                    f"(max |x - center| = {dist.max():.6g} >= {domain_radius})"
                )

    def validate(self, params, quad, domain_center=(0.0, 0.0), domain_radius=1.0):
        if self.kind == "arc":
            self.check_unit_speed(params)
        self.check_containment(params, quad, domain_center, domain_radius)


# --------------------------------------------------------------------------
# Target fields
# --------------------------------------------------------------------------


class TargetField:
    """Desired force ``f(t, x)``; returns shape ``broadcast(t, x[..., 0]) + (d,)``."""

    def __call__(self, t, x):
        raise NotImplementedError


@dataclass(frozen=True)
class ConstantTarget(TargetField):
    vector: tuple

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        shape = np.broadcast_shapes(t.shape, x.shape[:-1])
        return np.broadcast_to(np.asarray(self.vector, dtype=float), shape + (x.shape[-1],))


@dataclass(frozen=True)
class RotatingTarget(TargetField):
    """``f(t) = amplitude * (cos(phase + rate t), sin(phase + rate t))``, uniform in space."""

    amplitude: float = 1.0
    phase: float = 0.0
    rate: float = 0.0

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        shape = np.broadcast_shapes(t.shape, x.shape[:-1])
        ang = np.broadcast_to(self.phase + self.rate * t, shape)
        return self.amplitude * np.stack([np.cos(ang), np.sin(ang)], axis=-1)


@dataclass(frozen=True)
class TabulatedTarget(TargetField):
    """Spatially uniform target interpolated linearly from ``(times, vectors)``."""

    times: object
    vectors: object
    _curve: Tabulated = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_curve", Tabulated(self.times, self.vectors))

    def covers(self, T):
        k = self._curve._k
        return k[0] <= 1e-12 and k[-1] >= T - 1e-12

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        shape = np.broadcast_shapes(t.shape, x.shape[:-1])
        v = self._curve.value(np.broadcast_to(t, shape))
        return v.reshape(shape + (x.shape[-1],))


# --------------------------------------------------------------------------
# Pulled-back data on the reference disk
# --------------------------------------------------------------------------


def pullback_P(dipoles, law, p, quad):
    """``P_k(X(p, node)) * scale(p)^(d/2)`` at every quadrature node: ``(Q, d, n, n)``."""
    pts = law.map_point(p, quad.nodes)
    factor = law.scale.value(p) ** (law.dim / 2.0)
    return eval_P(dipoles, pts) * factor


def time_averaged_target(target, law, n, tau, quad):
    """Interval average of ``f(t, X(t, node)) * psi(t)^(d/2)`` over ``[(n-1) tau, n tau]``.

    Uses the 2-point Gauss rule in time; returns shape ``(Q, d)``.
    """
    if n < 1:
        raise ValueError("step index n must be >= 1")
    g = np.array([-1.0, 1.0]) / np.sqrt(3.0)
    t0 = (n - 1) * tau
    out = 0.0
    for gi in g:
        t = t0 + 0.5 * tau * (gi + 1.0)
        pts = law.map_point(t, quad.nodes)
        out = out + 0.5 * target(t, pts) * law.scale.value(t) ** (law.dim / 2.0)
    return np.asarray(out, dtype=float)
