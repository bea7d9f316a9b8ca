"""
Point-dipole magnetic fields and the Kelvin force they generate.

Each dipole ``i`` sits at ``x_i`` with unit direction ``d_i`` and contributes

    H_i(x) = (d r r^T / |r|^2 - I) d_i / |r|^d,   r = x - x_i,

so that the total field is ``H(x) = HH(x) @ alpha`` for an intensity vector
``alpha``.  The Kelvin force (unit constants) is ``grad |H|^2``, whose k-th
component is the quadratic form ``alpha^T P_k(x) alpha`` with
``P_k = d/dx_k (HH^T HH)``.

All evaluators are vectorized: ``x`` may have any leading shape ``(..., d)``.
"""

from dataclasses import dataclass

import numpy as np

SINGULAR_RADIUS = 1e-9


class SingularPointError(ValueError):
    """Raised when a field is evaluated on top of a dipole."""


@dataclass(frozen=True)
class DipoleArray:
    """Fixed dipole sources: ``positions`` and unit ``directions``, both (n_p, d)."""

    positions: np.ndarray
    directions: np.ndarray

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        dirs = np.atleast_2d(np.asarray(self.directions, dtype=float))
        if pos.shape != dirs.shape:
            raise ValueError(
                f"positions {pos.shape} and directions {dirs.shape} differ in shape"
            )
        if pos.shape[1] not in (2, 3):
            raise ValueError(f"spatial dimension must be 2 or 3, got {pos.shape[1]}")
        norms = np.linalg.norm(dirs, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-12):
            raise ValueError("dipole directions must be unit vectors (|d_i| = 1)")
        pos.setflags(write=False)
        dirs.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "directions", dirs)

    @property
    def dim(self):
        return self.positions.shape[1]

    @property
    def n_p(self):
        return self.positions.shape[0]

    @classmethod
    def ring(cls, n_p=8, radius=1.2, dim=2):
        """Dipoles evenly spaced on a circle, each pointing radially outward."""
        if dim != 2:
            raise ValueError("ring layout is only defined for d = 2")
        angles = np.arange(n_p) * (2.0 * np.pi / n_p)
        unit = np.column_stack([np.cos(angles), np.sin(angles)])
        return cls(radius * unit, unit)

    def check_outside(self, center, radius):
        """Raise unless every dipole lies strictly outside the closed ball."""
        dist = np.linalg.norm(self.positions - np.asarray(center, dtype=float), axis=1)
        bad = np.flatnonzero(dist <= radius)
        if bad.size:
            raise ValueError(
                f"dipoles {bad.tolist()} lie inside the closed domain ball "
                f"(center={list(center)}, radius={radius})"
            )


def _offsets(dipoles, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != dipoles.dim:
        raise ValueError(f"points have dimension {x.shape[-1]}, dipoles have {dipoles.dim}")
    r = x[..., None, :] - dipoles.positions  # (..., n_p, d)
    dist = np.linalg.norm(r, axis=-1)
    if np.any(dist < SINGULAR_RADIUS):
        raise SingularPointError(
            f"evaluation point within {SINGULAR_RADIUS:g} of a dipole position"
        )
    return r, dist


def eval_dipole_field(dipoles, x):
    """Per-dipole fields ``HH(x)`` with shape ``(..., d, n_p)``."""
    d = dipoles.dim
    r, dist = _offsets(dipoles, x)
    u = np.einsum("...ia,ia->...i", r, dipoles.directions)
    H = (d * u / dist ** (d + 2))[..., None] * r - dipoles.directions / (dist**d)[..., None]
    return np.swapaxes(H, -1, -2)


def eval_field_jacobian(dipoles, x):
    """Jacobians ``dH_i/dx`` of each dipole field, shape ``(..., n_p, d, d)``.

    Entry ``[..., i, a, b]`` is ``d H_{i,a} / d x_b``.  Each Jacobian is
    symmetric and traceless, which is the pointwise form of curl H = 0 and
    div H = 0.
    """
    d = dipoles.dim
    r, dist = _offsets(dipoles, x)
    dhat = dipoles.directions
    u = np.einsum("...ia,ia->...i", r, dhat)
    eye = np.eye(d)
    rr = r[..., :, None] * r[..., None, :]
    rd = r[..., :, None] * dhat[:, None, :]
    J = (
        rd
        + np.swapaxes(rd, -1, -2)
        + u[..., None, None] * eye
        - ((d + 2) * u / dist**2)[..., None, None] * rr
    )
    return (d / dist ** (d + 2))[..., None, None] * J


def field_and_P(dipoles, x):
    """Return ``(HH, P)`` at ``x``; ``P`` has shape ``(..., d, n_p, n_p)``."""
    H = eval_dipole_field(dipoles, x)  # (..., d, n_p)
    J = eval_field_jacobian(dipoles, x)  # (..., n_p, a, k)
    # G[..., k, a, i] = d H_{i,a} / d x_k
    G = np.moveaxis(J, -3, -1)  # (..., a, k, i)
    G = np.swapaxes(G, -3, -2)  # (..., k, a, i)
    A = np.einsum("...kai,...aj->...kij", G, H)
    P = A + np.swapaxes(A, -1, -2)
    return H, P


def eval_P(dipoles, x):
    """Symmetric matrices ``P_k(x)``, shape ``(..., d, n_p, n_p)``."""
    return field_and_P(dipoles, x)[1]


def total_field(dipoles, x, alpha):
    """``H(x) = HH(x) alpha`` with shape ``(..., d)``."""
    return eval_dipole_field(dipoles, x) @ np.asarray(alpha, dtype=float)


def total_jacobian(dipoles, x, alpha):
    """Jacobian of the total field, ``sum_i alpha_i dH_i/dx``, shape ``(..., d, d)``."""
    J = eval_field_jacobian(dipoles, x)
    return np.einsum("...iab,i->...ab", J, np.asarray(alpha, dtype=float))


def kelvin_force(dipoles, x, alpha):
    """Force ``grad |H|^2`` as the quadratic forms ``alpha^T P_k alpha``."""
    alpha = np.asarray(alpha, dtype=float)
    P = eval_P(dipoles, x)
    return np.einsum("i,...kij,j->...k", alpha, P, alpha)


def kelvin_force_from_jacobian(dipoles, x, alpha):
    """Same force assembled independently as ``2 J_H^T H``."""
    H = total_field(dipoles, x, alpha)
    J = total_jacobian(dipoles, x, alpha)
    return 2.0 * np.einsum("...ak,...a->...k", J, H)


def force_grid(dipoles, alpha, bounds=(-1.0, 1.0), n=101, min_separation=1e-3):
    """Sample ``H`` and the Kelvin force on a uniform 2-D grid.

    Returns a structured dict of flat arrays ``x, y, Hx, Hy, Fx, Fy, logF``;
    points closer than ``min_separation`` to a dipole are dropped.
    """
    if dipoles.dim != 2:
        raise ValueError("grid dump supports d = 2 only")
    ticks = np.linspace(bounds[0], bounds[1], n)
    X, Y = np.meshgrid(ticks, ticks, indexing="xy")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    dist = np.linalg.norm(pts[:, None, :] - dipoles.positions, axis=-1).min(axis=1)
    pts = pts[dist >= min_separation]
    H = total_field(dipoles, pts, alpha)
    F = kelvin_force(dipoles, pts, alpha)
    mag = np.linalg.norm(F, axis=1)
    with np.errstate(divide="ignore"):
        logF = np.log10(mag)
    return {
        "x": pts[:, 0],
        "y": pts[:, 1],
        "Hx": H[:, 0],
        "Hy": H[:, 1],
        "Fx": F[:, 0],
        "Fy": F[:, 1],
        "logF": logF,
    }
