"""
Advection-diffusion of a passive concentration under a prescribed force field.

Solves ``dc/dt + div(-eps grad c + c b) = 0`` with ``c = 0`` on the outer
boundary using P1 triangles, backward Euler in time and SUPG test enrichment
``v + tau_K b . grad v``.  The unit disk is approximated by a structured
triangulation of a slightly larger square in which every node with
``|x| >= 1`` is a homogeneous Dirichlet node.  The force is sampled at element
centroids, so it is constant on each triangle.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .field import eval_P

logger = logging.getLogger(__name__)

HALF_WIDTH = 1.05


class TransportError(RuntimeError):
    pass


@dataclass(frozen=True)
class TransportConfig:
    eps: float = 1e-5
    mesh_n: int = 128
    time_steps: int = 160
    T: float = 1.0
    bump_center: tuple = (-0.75, 0.0)
    bump_radius: float = 0.2
    supg: bool = True
    lumped_mass: bool = False
    snapshot_times: tuple = ()

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("diffusion coefficient eps must be positive")
        if self.time_steps < 1 or self.T <= 0:
            raise ValueError("need time_steps >= 1 and T > 0")
        if np.linalg.norm(self.bump_center) + self.bump_radius >= 1.0:
            raise ValueError("initial bump support must lie inside the unit disk")


@dataclass
class Mesh:
    nodes: np.ndarray  # (V, 2)
    triangles: np.ndarray  # (E, 3), counter-clockwise
    dirichlet: np.ndarray  # (V,) bool
    area: np.ndarray = field(init=False)
    grads: np.ndarray = field(init=False)  # (E, 3, 2) barycentric gradients
    centroids: np.ndarray = field(init=False)
    diameter: np.ndarray = field(init=False)

    def __post_init__(self):
        p = self.nodes[self.triangles]  # (E, 3, 2)
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        self.area = 0.5 * det
        # grad of barycentric lambda_a is the rotated opposite edge over 2*area
        opp = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
        self.grads = np.stack([-opp[..., 1], opp[..., 0]], axis=-1) / det[:, None, None]
        self.centroids = p.mean(axis=1)
        self.diameter = np.linalg.norm(opp, axis=-1).max(axis=1)

    @property
    def n_nodes(self):
        return len(self.nodes)

    def lumped_mass(self):
        m = np.zeros(self.n_nodes)
        np.add.at(m, self.triangles.ravel(), np.repeat(self.area / 3.0, 3))
        return m


def build_mesh(mesh_n):
    """Two triangles per cell on ``[-1.05, 1.05]^2``; nodes with ``|x| >= 1`` are Dirichlet."""
    if mesh_n < 2:
        raise ValueError("mesh_n must be >= 2")
    ticks = np.linspace(-HALF_WIDTH, HALF_WIDTH, mesh_n + 1)
    X, Y = np.meshgrid(ticks, ticks, indexing="xy")
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange((mesh_n + 1) ** 2).reshape(mesh_n + 1, mesh_n + 1)  # [row=y, col=x]
    a = idx[:-1, :-1].ravel()
    b = idx[:-1, 1:].ravel()
    c = idx[1:, 1:].ravel()
    d = idx[1:, :-1].ravel()
    tris = np.concatenate([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    dirichlet = np.linalg.norm(nodes, axis=1) >= 1.0
    return Mesh(nodes, tris, dirichlet)


def cosine_bump(x, center, radius):
    """``cos^2(pi |x - c| / (2 r))`` inside the disk, zero outside; peak value 1."""
    r = np.linalg.norm(np.asarray(x) - np.asarray(center), axis=-1)
    return np.where(r < radius, np.cos(0.5 * np.pi * r / radius) ** 2, 0.0)


def supg_parameter(b_norm, h, eps):
    """Brooks-Hughes ``tau_K = h/(2|b|) (coth Pe - 1/Pe)``, ``Pe = |b| h / (2 eps)``."""
    pe = b_norm * h / (2.0 * eps)
    tau = np.empty_like(pe)
    small = pe < 1e-3
    tau[small] = h[small] ** 2 / (12.0 * eps)
    big = ~small
    pb = pe[big]
    tau[big] = h[big] / (2.0 * b_norm[big]) * (1.0 / np.tanh(pb) - 1.0 / pb)
    return tau


@dataclass
class ConcentrationState:
    c: np.ndarray
    time: float
    mass: float


class TransportSolver:
    """Backward-Euler SUPG stepping on a fixed mesh.

    Only elements touching at least one non-Dirichlet node are assembled; the
    force is never requested elsewhere.
    """

    def __init__(self, mesh, config):
        self.mesh = mesh
        self.config = config
        self.free = ~mesh.dirichlet
        self.elements = np.flatnonzero(self.free[mesh.triangles].any(axis=1))
        tri = mesh.triangles[self.elements]
        self._tri = tri
        self._rows = np.repeat(tri, 3, axis=1).ravel()
        self._cols = np.tile(tri, (1, 3)).ravel()
        area = mesh.area[self.elements]
        grads = mesh.grads[self.elements]
        self._area = area
        self._grads = grads
        self._h = mesh.diameter[self.elements]
        if config.lumped_mass:
            Mloc = area[:, None, None] / 3.0 * np.eye(3)
        else:
            Mloc = area[:, None, None] / 12.0 * (np.ones((3, 3)) + np.eye(3))
        Kloc = config.eps * area[:, None, None] * np.einsum("eak,ebk->eab", grads, grads)
        self._Mloc = Mloc
        self._Kloc = Kloc
        self.lumped = mesh.lumped_mass()
        self._free_idx = np.flatnonzero(self.free)

    @property
    def centroids(self):
        return self.mesh.centroids[self.elements]

    def mass(self, c):
        return float(self.lumped @ c)

    def _matrix(self, loc):
        V = self.mesh.n_nodes
        return sp.coo_matrix((loc.ravel(), (self._rows, self._cols)), shape=(V, V)).tocsr()

    def step(self, state, b, dt):
        """Advance one backward-Euler step with element force ``b (E_active, 2)``."""
        if dt <= 0:
            raise ValueError("time step must be positive")
        b = np.asarray(b, dtype=float)
        if b.shape != (len(self.elements), 2) or not np.all(np.isfinite(b)):
            raise TransportError("force must be finite on every assembled element")
        area = self._area
        bgrad = np.einsum("ek,eak->ea", b, self._grads)  # b . grad(phi_a)
        adv = -(area / 3.0)[:, None, None] * np.repeat(bgrad[:, :, None], 3, axis=2)
        time_loc = self._Mloc
        stiff = self._Kloc + adv
        if self.config.supg:
            tau = supg_parameter(np.linalg.norm(b, axis=1), self._h, self.config.eps)
            tb = (tau * area)[:, None] * bgrad
            time_loc = time_loc + np.repeat(tb[:, :, None] / 3.0, 3, axis=2)
            stiff = stiff + tb[:, :, None] * bgrad[:, None, :]
        Mt = self._matrix(time_loc)
        S = self._matrix(stiff)
        A = (Mt / dt + S)
        rhs = Mt @ state.c / dt
        f = self._free_idx
        A_ff = A[f][:, f].tocsc()
        try:
            lu = splu(A_ff)
        except RuntimeError as exc:
            raise TransportError(
                f"singular transport system at t={state.time + dt:.6g}: {exc}"
            ) from exc
        cf = lu.solve(rhs[f])
        res = np.linalg.norm(A_ff @ cf - rhs[f])
        scale = max(np.linalg.norm(rhs[f]), 1e-300)
        if res > 1e-10 * scale and res > 1e-300:
            raise TransportError(
                f"linear solve residual {res:.3e} exceeds tolerance at t={state.time + dt:.6g}"
            )
        c = np.zeros_like(state.c)
        c[f] = cf
        return ConcentrationState(c, state.time + dt, self.mass(c))

    def initial_state(self, c0):
        c = np.asarray(c0, dtype=float).copy()
        c[self.mesh.dirichlet] = 0.0
        return ConcentrationState(c, 0.0, self.mass(c))


def containment_fraction(solver, c, center, radius):
    """Share of the (lumped) mass carried by nodes inside the disk."""
    inside = np.linalg.norm(solver.mesh.nodes - np.asarray(center), axis=1) <= radius
    total = solver.lumped @ c
    if total == 0:
        return float("nan")
    return float(solver.lumped[inside] @ c[inside] / total)


@dataclass
class TransportResult:
    times: np.ndarray
    mass: np.ndarray
    containment: np.ndarray
    c_min: np.ndarray
    c_max: np.ndarray
    snapshots: dict
    final: ConcentrationState
    mesh: Mesh

    def rows(self):
        return list(zip(self.times, self.mass, self.containment, self.c_min, self.c_max))


def simulate(config, force, disk=None, c0=None, mesh=None, callback=None):
    """Run the transport model from the cosine bump (or ``c0``) to ``config.T``.

    ``force(t, pts)`` returns the force at points ``(E, 2)``.  ``disk(t)`` returns
    ``(center, radius)`` of the tracking subdomain for the containment metric.
    """
    mesh = mesh or build_mesh(config.mesh_n)
    solver = TransportSolver(mesh, config)
    if c0 is None:
        c0 = cosine_bump(mesh.nodes, config.bump_center, config.bump_radius)
    state = solver.initial_state(c0)
    dt = config.T / config.time_steps
    pts = solver.centroids

    def record(st):
        times.append(st.time)
        mass.append(st.mass)
        if disk is not None:
            center, radius = disk(st.time)
            cont.append(containment_fraction(solver, st.c, center, radius))
        else:
            cont.append(float("nan"))
        cmin.append(float(st.c.min()))
        cmax.append(float(st.c.max()))

    times, mass, cont, cmin, cmax = [], [], [], [], []
    snaps = {}
    pending = sorted(config.snapshot_times)
    record(state)
    if pending and pending[0] <= 0.0:
        snaps[0.0] = state.c.copy()
        pending.pop(0)
    for k in range(1, config.time_steps + 1):
        t = k * dt
        state = solver.step(state, force(t, pts), dt)
        state.time = t
        record(state)
        while pending and pending[0] <= t + 0.5 * dt:
            snaps[pending.pop(0)] = state.c.copy()
        if callback is not None:
            callback(k, state)
    return TransportResult(
        np.array(times), np.array(mass), np.array(cont), np.array(cmin), np.array(cmax),
        snaps, state, mesh,
    )


class KelvinForceField:
    """Kelvin force of a fixed dipole array under a time-interpolated control path.

    ``P`` is cached for the last point set queried, so repeated calls on the
    element centroids cost one quadratic form per element.
    """

    def __init__(self, dipoles, path, control="linear"):
        if control not in ("linear", "step"):
            raise ValueError("control must be 'linear' or 'step'")
        self.dipoles = dipoles
        self.path = path
        self.control = control
        self._pts = None
        self._P = None

    def intensities(self, t):
        grid = self.path.grid
        if self.control == "step":
            # alpha^n acts on (t^{n-1}, t^n], as in the discrete tracking functional
            n = int(np.searchsorted(grid, t - 1e-12 * grid[-1], side="left"))
            return self.path.values[min(max(n, 1), len(grid) - 1)]
        return self.path.interpolate(min(max(t, grid[0]), grid[-1]))

    def __call__(self, t, pts):
        if self._pts is None or self._pts.shape != pts.shape or not np.array_equal(self._pts, pts):
            self._pts = np.array(pts, copy=True)
            self._P = eval_P(self.dipoles, pts)
        alpha = self.intensities(t)
        return np.einsum("i,ekij,j->ek", alpha, self._P, alpha)


def run_transport(config, dipoles, path, law, control="linear", callback=None):
    """Transport the bump with the Kelvin force of ``path`` and track containment in ``law``'s disk.

    ``control="linear"`` interpolates the intensities between nodes; ``"step"``
    holds ``alpha^n`` on each control interval.
    """
    if path.grid[0] > 1e-12 or path.grid[-1] < config.T - 1e-12:
        raise ValueError("control path does not cover the transport horizon")
    force = KelvinForceField(dipoles, path, control)

    def disk(t):
        return law.center_at(min(t, law.end)), float(law.radius_at(min(t, law.end)))

    return simulate(config, force, disk, callback=callback)
