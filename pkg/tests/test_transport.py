import numpy as np
import pytest
from scipy.special import j0, jn_zeros

from kelvintrack.objective import ControlPath
from kelvintrack.transport import (
    KelvinForceField,
    TransportConfig,
    TransportError,
    TransportSolver,
    build_mesh,
    containment_fraction,
    cosine_bump,
    run_transport,
    simulate,
    supg_parameter,
)


@pytest.fixture(scope="module")
def mesh32():
    return build_mesh(32)


def constant_force(vec):
    vec = np.asarray(vec, float)
    return lambda t, pts: np.tile(vec, (len(pts), 1))


def test_mesh_geometry(mesh32):
    assert np.all(mesh32.area > 0)
    assert mesh32.area.sum() == pytest.approx(2.1**2, rel=1e-13)
    np.testing.assert_allclose(mesh32.grads.sum(axis=1), 0.0, atol=1e-12)
    h = 2.1 / 32
    np.testing.assert_allclose(mesh32.diameter, np.sqrt(2) * h, rtol=1e-12)
    assert np.array_equal(mesh32.dirichlet, np.linalg.norm(mesh32.nodes, axis=1) >= 1.0)


def test_barycentric_gradients_reproduce_linear(mesh32):
    u = 2.0 * mesh32.nodes[:, 0] - 3.0 * mesh32.nodes[:, 1] + 0.5
    g = np.einsum("ea,eak->ek", u[mesh32.triangles], mesh32.grads)
    np.testing.assert_allclose(g, np.tile([2.0, -3.0], (len(g), 1)), atol=1e-11)


def test_lumped_mass_integrates_p1(mesh32):
    u = 1.0 + mesh32.nodes[:, 0]
    # exact integral of 1 + x over the square is its area
    assert mesh32.lumped_mass() @ u == pytest.approx(2.1**2, rel=1e-12)


def test_mesh_rejects_tiny():
    with pytest.raises(ValueError):
        build_mesh(1)


def test_supg_limits():
    h = np.full(3, 0.1)
    eps = 1e-5
    tau = supg_parameter(np.array([1e-9, 1.0, 1e4]), h, eps)
    assert tau[0] == pytest.approx(h[0] ** 2 / (12 * eps), rel=1e-6)
    assert tau[1] == pytest.approx(0.05 * (1 - 2 * eps / 0.1), rel=1e-6)
    assert tau[2] == pytest.approx(h[0] / (2e4), rel=1e-6)
    # continuity across the small-Peclet switch
    b = np.array([0.999e-3, 1.001e-3]) * 2 * eps / 0.1
    t = supg_parameter(b, np.full(2, 0.1), eps)
    assert t[0] == pytest.approx(t[1], rel=1e-5)


def test_bump_profile():
    assert cosine_bump(np.array([-0.75, 0.0]), (-0.75, 0.0), 0.2) == 1.0
    assert cosine_bump(np.array([-0.5, 0.0]), (-0.75, 0.0), 0.2) == 0.0
    assert cosine_bump(np.array([-0.65, 0.0]), (-0.75, 0.0), 0.2) == pytest.approx(0.5)


def test_config_validation():
    with pytest.raises(ValueError):
        TransportConfig(eps=0.0)
    with pytest.raises(ValueError):
        TransportConfig(bump_center=(0.9, 0.0))


def test_heat_mode_decay():
    # lowest Dirichlet mode of the unit disk decays like exp(-eps j01^2 t)
    eps, T = 0.05, 0.4
    cfg = TransportConfig(eps=eps, mesh_n=64, time_steps=80, T=T)
    mesh = build_mesh(64)
    z = jn_zeros(0, 1)[0]
    c0 = np.clip(j0(z * np.linalg.norm(mesh.nodes, axis=1)), 0.0, None)
    res = simulate(cfg, constant_force((0.0, 0.0)), mesh=mesh, c0=c0)
    expected = np.exp(-eps * z**2 * T)
    # staircase boundary shrinks the domain by O(h): allow 5%
    assert res.mass[-1] / res.mass[0] == pytest.approx(expected, rel=0.05)


def test_diffusion_max_principle_lumped():
    cfg = TransportConfig(eps=1e-2, mesh_n=32, time_steps=20, supg=False, lumped_mass=True)
    res = simulate(cfg, constant_force((0.0, 0.0)))
    assert np.all(res.c_min >= -1e-14 * res.c_max)
    assert np.all(np.diff(res.c_max) <= 1e-14)
    assert np.all(np.diff(res.mass) <= 1e-15)


def test_uniform_advection_moves_centroid():
    # start well away from the boundary so no mass can leave
    cfg = TransportConfig(eps=1e-5, mesh_n=64, time_steps=50, T=0.5, bump_center=(-0.4, 0.0))
    seen = {}

    def grab(k, st):
        seen["c"] = st.c

    res = simulate(cfg, constant_force((1.0, 0.0)), callback=grab)
    mesh = res.mesh
    m = mesh.lumped_mass() * seen["c"]
    centroid = m @ mesh.nodes / m.sum()
    np.testing.assert_allclose(centroid, [0.1, 0.0], atol=0.01)
    # support stays inside: mass is conserved up to solver precision
    assert abs(res.mass[-1] - res.mass[0]) <= 1e-8 * res.mass[0]


def test_supg_reduces_undershoot():
    out = {}
    for supg in (True, False):
        cfg = TransportConfig(eps=1e-5, mesh_n=32, time_steps=20, T=0.4, supg=supg)
        res = simulate(cfg, constant_force((1.0, 0.5)))
        out[supg] = np.min(res.c_min / res.c_max)
    assert out[True] > out[False]


def test_step_rejects_bad_force(mesh32):
    solver = TransportSolver(mesh32, TransportConfig(mesh_n=32))
    st = solver.initial_state(cosine_bump(mesh32.nodes, (-0.75, 0.0), 0.2))
    b = np.zeros((len(solver.elements), 2))
    b[5, 0] = np.nan
    with pytest.raises(TransportError, match="finite"):
        solver.step(st, b, 0.01)
    with pytest.raises(TransportError):
        solver.step(st, np.zeros((3, 2)), 0.01)
    with pytest.raises(ValueError):
        solver.step(st, np.zeros((len(solver.elements), 2)), 0.0)


def test_only_elements_near_free_nodes(mesh32):
    solver = TransportSolver(mesh32, TransportConfig(mesh_n=32))
    free = ~mesh32.dirichlet
    touched = free[mesh32.triangles[solver.elements]].any(axis=1)
    assert touched.all()
    assert len(solver.elements) < len(mesh32.triangles)


def test_containment_full_inside(mesh32):
    solver = TransportSolver(mesh32, TransportConfig(mesh_n=32))
    c = cosine_bump(mesh32.nodes, (-0.75, 0.0), 0.2)
    assert containment_fraction(solver, c, (-0.75, 0.0), 0.2) == pytest.approx(1.0, abs=1e-15)
    assert containment_fraction(solver, c, (0.5, 0.0), 0.2) == 0.0


def test_control_interpolation(ring):
    grid = np.linspace(0, 1, 3)
    values = np.array([np.zeros(8), np.ones(8), 2 * np.ones(8)])
    path = ControlPath(grid, values, -2, 2)
    lin = KelvinForceField(ring, path, "linear")
    step = KelvinForceField(ring, path, "step")
    np.testing.assert_allclose(lin.intensities(0.25), 0.5)
    np.testing.assert_allclose(step.intensities(0.25), 1.0)
    np.testing.assert_allclose(step.intensities(0.5), 1.0)
    np.testing.assert_allclose(step.intensities(0.5 + 1e-9), 2.0)
    np.testing.assert_allclose(step.intensities(0.0), 1.0)
    with pytest.raises(ValueError):
        KelvinForceField(ring, path, "cubic")


def test_force_field_quadratic(ring):
    path = ControlPath(np.array([0.0, 1.0]), np.ones((2, 8)), -2, 2)
    fld = KelvinForceField(ring, path)
    pts = np.array([[0.1, 0.2], [-0.3, 0.0]])
    base = fld(0.5, pts)
    path.values *= 2.0
    np.testing.assert_allclose(fld(0.5, pts), 4 * base, rtol=1e-14)


def test_run_transport_requires_horizon(ring, line_law):
    path = ControlPath(np.array([0.0, 0.5]), np.ones((2, 8)), -2, 2)
    with pytest.raises(ValueError, match="horizon"):
        run_transport(TransportConfig(mesh_n=8, time_steps=2), ring, path, line_law)


def test_snapshots_recorded(ring, line_law):
    path = ControlPath(np.array([0.0, 1.0]), np.zeros((2, 8)), -2, 2)
    cfg = TransportConfig(mesh_n=16, time_steps=4, snapshot_times=(0.0, 0.5, 1.0))
    res = run_transport(cfg, ring, path, line_law)
    assert sorted(res.snapshots) == [0.0, 0.5, 1.0]
    assert len(res.times) == 5


def test_tiny_mesh_counts():
    mesh = build_mesh(2)
    assert len(mesh.triangles) == 8 and mesh.n_nodes == 9
    on_square = np.max(np.abs(mesh.nodes), axis=1) == 1.05
    assert np.all(mesh.dirichlet[on_square]) and not mesh.dirichlet[4]


def test_zero_data_stays_zero(mesh32):
    cfg = TransportConfig(mesh_n=32, time_steps=5)
    res = simulate(cfg, constant_force((0.7, -0.2)), mesh=mesh32, c0=np.zeros(mesh32.n_nodes))
    assert np.all(res.final.c == 0.0) and np.all(res.mass == 0.0)


def test_centroid_drift_monotone():
    cfg = TransportConfig(eps=1e-5, mesh_n=64, time_steps=40, T=0.4)
    xs = []

    def grab(k, st):
        w = lumped * st.c
        xs.append(w @ mesh.nodes[:, 0] / w.sum())

    mesh = build_mesh(64)
    lumped = mesh.lumped_mass()
    simulate(cfg, constant_force((1.0, 0.0)), mesh=mesh, callback=grab)
    assert np.all(np.diff(xs) > 0)
    assert xs[-1] - (-0.75) == pytest.approx(0.4, rel=0.1)


def test_mass_bound_and_initial_containment(ring, line_law):
    path = ControlPath(np.array([0.0, 1.0]), np.full((2, 8), 0.5), -2, 2)
    res = run_transport(TransportConfig(mesh_n=32, time_steps=8), ring, path, line_law)
    assert res.containment[0] == pytest.approx(1.0, abs=0.02)
    assert np.all(res.mass <= res.mass[0] + 1e-10)


def _gaussian_run(n, steps):
    cfg = TransportConfig(eps=1e-2, mesh_n=n, time_steps=steps, T=0.5)
    mesh = build_mesh(n)
    c0 = np.exp(-np.sum((mesh.nodes - np.array([-0.3, 0.1])) ** 2, axis=1) / (2 * 0.15**2))
    return mesh, simulate(cfg, constant_force((0.0, 0.0)), mesh=mesh, c0=c0).final.c


def test_diffusion_convergence_under_refinement():
    ref_n = 128
    _, ref = _gaussian_run(ref_n, 160)
    errs = []
    for n, steps in ((16, 20), (32, 40)):
        mesh, c = _gaussian_run(n, steps)
        # nested structured meshes: coarse nodes are every (ref_n/n)-th fine node
        k = ref_n // n
        idx = np.arange((ref_n + 1) ** 2).reshape(ref_n + 1, ref_n + 1)[::k, ::k].ravel()
        d = c - ref[idx]
        errs.append(np.sqrt(mesh.lumped_mass() @ d**2))
    assert errs[0] / errs[1] >= 1.7


def _supg_gap(path, dipoles, mesh_n, time_steps):
    fld = KelvinForceField(dipoles, path)
    hist = {}
    for supg in (True, False):
        cs = []
        res = simulate(TransportConfig(eps=1.0, mesh_n=mesh_n, time_steps=time_steps, supg=supg), fld,
                       callback=lambda k, st: cs.append(st.c.copy()))
        hist[supg] = cs
    m = res.mesh.lumped_mass()
    return max(np.sqrt(m @ (a - b) ** 2) / np.sqrt(m @ b**2) for a, b in zip(hist[True], hist[False]))


@pytest.fixture(scope="module")
def small_optimized():
    from kelvintrack import FixedTimeForceDesigner

    est = FixedTimeForceDesigner(n_steps=8, lam=1e-3).fit()
    return ControlPath(est.grid_, est.intensities_, -2, 2), est.dipoles_


def test_supg_gap_shrinks_with_mesh(small_optimized):
    path, dipoles = small_optimized
    gaps = [_supg_gap(path, dipoles, n, 16) for n in (16, 32)]
    assert gaps[1] < 0.6 * gaps[0]


@pytest.mark.xfail(reason="Kelvin force near the Dirichlet ring keeps Pe_K ~ 30 even at eps = 1 on the "
                          "128 mesh; measured SUPG/Galerkin gap is 1.0-2.0%", strict=False)
def test_supg_galerkin_agree_at_large_diffusion(small_optimized):
    path, dipoles = small_optimized
    assert _supg_gap(path, dipoles, 128, 160) <= 0.01
