import numpy as np
import pytest

from kelvintrack.field import eval_P
from kelvintrack.objective import ControlPath, InfeasiblePathError, Problem1, Problem2, recover_final_time
from kelvintrack.pipeline import fd_relative_error, interior_point


@pytest.fixture(scope="module")
def p1(ring, line_law, f1, line_quad):
    return Problem1(ring, line_law, f1, line_quad, T=1.0, N=8, lam=1e-3)


@pytest.fixture(scope="module")
def p2(ring, arc_law, origin_quad):
    return Problem2(ring, arc_law, origin_quad, M=6, lam=1e-4, eta=1e-3, beta=0.1)


def start_path(problem, rng):
    return problem.unpack(interior_point(problem, rng))


def loop_J(problem, values):
    # straight transcription with explicit loops: independent of the batched code
    tau, w = problem.tau, problem.quad.weights
    J1 = 0.0
    for n in range(1, problem.N + 1):
        t = n * tau
        pts = problem.law.map_point(t, problem.quad.nodes)
        P = eval_P(problem.dipoles, pts) * problem.law.jacobian_det(t)
        for q in range(len(w)):
            for k in range(2):
                form = values[n] @ P[q, k] @ values[n]
                J1 += 0.5 * tau * w[q] * (form - problem.f_hat[n - 1, q, k]) ** 2
    J2 = sum(0.5 * problem.lam / tau * np.sum((values[n] - values[n - 1]) ** 2) for n in range(1, problem.N + 1))
    return J1, J2


def test_p1_matches_loop_reference(p1, rng):
    path = start_path(p1, rng)
    J1, J2 = p1.parts(path)
    r1, r2 = loop_J(p1, path.values)
    assert J1 == pytest.approx(r1, rel=1e-12)
    assert J2 == pytest.approx(r2, rel=1e-12)


def test_p1_zero_intensity_cost(ring, line_law, f1, line_quad):
    prob = Problem1(ring, line_law, f1, line_quad, N=4, lam=1e-3, alpha0=np.zeros(8))
    J1, J2 = prob.parts(prob.constant_path(0.0))
    # |f|^2 = 1 integrated over disk area and time
    assert J1 == pytest.approx(0.5 * line_quad.area, rel=1e-12)
    assert J2 == 0.0


def test_p1_gradient_fd(p1, rng):
    x = interior_point(p1, rng)
    assert fd_relative_error(p1.fun_and_grad, x, rng) <= 1e-6


def test_p1_gradient_shape(p1, rng):
    g = p1.gradient(start_path(p1, rng))
    assert g.shape == (8, 8)


def test_p1_last_node_has_single_penalty(p1):
    # node N has no forward increment; the cost here is O(10), so use a wider FD step
    path = p1.constant_path()
    values = path.values.copy()
    values[-1] += 0.1
    path = ControlPath(path.grid, values, p1.lower, p1.upper)
    g = p1.gradient(path)
    h = 1e-4
    x = p1.pack(path)
    e = np.zeros_like(x)
    e[-8] = h
    fd = (p1.fun_and_grad(x + e)[0] - p1.fun_and_grad(x - e)[0]) / (2 * h)
    assert g[-1, 0] == pytest.approx(fd, rel=1e-6)


def test_p1_rejects_bad_inputs(ring, line_law, f1, line_quad, p1):
    with pytest.raises(ValueError, match="lambda"):
        Problem1(ring, line_law, f1, line_quad, N=2, lam=0.0)
    with pytest.raises(ValueError, match="bounds"):
        Problem1(ring, line_law, f1, line_quad, N=2, lower=1.0, upper=-1.0)
    bad = p1.constant_path()
    bad.values[3, 2] = 5.0
    with pytest.raises(InfeasiblePathError):
        p1.value(bad)
    moved = p1.constant_path()
    moved.values[0, 0] = 0.5
    with pytest.raises(InfeasiblePathError, match="alpha0"):
        p1.value(moved)


def test_p1_step_problem_is_one_step_functional(ring, line_law, f1, line_quad, rng):
    prob = Problem1(ring, line_law, f1, line_quad, N=1, lam=1e-3)
    x = rng.uniform(-1, 1, 8)
    val, _ = prob.step_problem(1, prob.alpha0)(x)
    path = prob.unpack(x)
    assert val == pytest.approx(prob.value(path) / prob.tau, rel=1e-12)


def test_step_problem_gradient(p1, p2, rng):
    f = p1.step_problem(3, np.full(8, 0.2))
    assert fd_relative_error(f, rng.uniform(-1, 1, 8), rng) <= 1e-6
    g = p2.step_problem(2, np.full(8, 0.1), 0.5)
    assert fd_relative_error(g, np.append(rng.uniform(-0.5, 0.5, 8), 0.7), rng) <= 1e-6


def test_p2_gradient_fd(p2, rng):
    x = interior_point(p2, rng)
    assert fd_relative_error(p2.fun_and_grad, x, rng, n_coords=40) <= 1e-6


def test_p2_speed_gradient_fd(p2, rng):
    x = interior_point(p2, rng)
    _, g = p2.fun_and_grad(x)
    h = 1e-6
    for j in range(p2.M * 8, p2.n_free):
        e = np.zeros_like(x)
        e[j] = h
        fd = (p2.fun_and_grad(x + e)[0] - p2.fun_and_grad(x - e)[0]) / (2 * h)
        assert abs(g[j] - fd) <= 1e-6 * max(1.0, abs(fd))


def test_p2_parts_closed_form(ring, arc_law, origin_quad):
    prob = Problem2(ring, arc_law, origin_quad, M=5, lam=1e-4, eta=1e-3, beta=0.1,
                    alpha0=np.zeros(8), theta0=0.5)
    path = prob.constant_path(0.0, speed=0.5)
    F1, F2, F3, F4 = prob.parts(path)
    k = prob.kappa
    # zero force: residual is -theta * unit tangent
    assert F1 == pytest.approx(5 * 0.5 * k / 0.5 * 0.25 * origin_quad.area, rel=1e-12)
    assert F2 == pytest.approx(5 * 0.1 * k / 0.5, rel=1e-12)
    assert F3 == 0.0 and F4 == 0.0


def test_p2_bounds_layout(p2):
    lo, hi = p2.bounds()
    assert lo.shape == (p2.n_free,)
    assert np.all(lo[-p2.M:] == 1e-10) and np.all(hi[-p2.M:] == 10.0)
    assert np.all(lo[:-p2.M] == -1.0)


def test_p2_rejects_nonpositive_speed(p2):
    path = p2.constant_path(speed=0.0)
    with pytest.raises(InfeasiblePathError):
        p2.value(path)


def test_p2_needs_arc_law(ring, line_law, line_quad):
    with pytest.raises(ValueError, match="arc"):
        Problem2(ring, line_law, line_quad)


def test_recover_final_time_constant():
    T, t = recover_final_time(np.full(11, 2.0), 0.1)
    assert T == pytest.approx(0.5, rel=1e-14)
    np.testing.assert_allclose(t, np.linspace(0, 0.5, 11), atol=1e-15)


def test_recover_final_time_linear_speed():
    # theta(s) = 1 + s is linear, so the trapezoid step is the harmonic-type mean
    s = np.linspace(0, 1, 5)
    T, _ = recover_final_time(1 + s, 0.25)
    assert T == pytest.approx(sum(2 * 0.25 / (2 + s[i] + s[i + 1]) for i in range(4)), rel=1e-14)
    with pytest.raises(ValueError):
        recover_final_time([1.0, 0.0], 0.1)


def test_refined_path_interpolates(p1, rng):
    path = start_path(p1, rng)
    fine = path.refined()
    assert fine.n_steps == 16
    np.testing.assert_allclose(fine.values[::2], path.values, atol=1e-15)
    np.testing.assert_allclose(fine.values[1], 0.5 * (path.values[0] + path.values[1]), atol=1e-15)


def test_parts_nonnegative_and_additive(p1, p2, rng):
    path = start_path(p1, rng)
    parts = p1.parts(path)
    assert min(parts) >= 0 and p1.value(path) == pytest.approx(sum(parts), rel=1e-14)
    f, _ = p1.fun_and_grad(p1.pack(path))
    assert f == pytest.approx(sum(parts), rel=1e-14)
    path2 = start_path(p2, rng)
    parts2 = p2.parts(path2)
    assert min(parts2) >= 0 and p2.value(path2) == pytest.approx(sum(parts2), rel=1e-14)


def test_penalty_refinement_invariant(ring, line_law, f1, line_quad, rng):
    coarse = Problem1(ring, line_law, f1, line_quad, N=4, lam=1e-3)
    fine = Problem1(ring, line_law, f1, line_quad, N=8, lam=1e-3)
    path = start_path(coarse, rng)
    J2c = coarse.parts(path)[1]
    J2f = fine.parts(path.refined())[1]
    assert abs(J2f - J2c) <= 1e-12 * J2c


def test_zero_tracking_identity(ring, line_law, f1, line_quad):
    prob = Problem1(ring, line_law, f1, line_quad, N=4, lam=1e-3)
    alpha = np.linspace(-1.0, 1.0, 8)
    # overwrite the averaged target with the force produced by the constant path
    prob.f_hat = np.einsum("i,nqkij,j->nqk", alpha, prob.P_hat, alpha)
    prob.alpha0 = alpha
    J1, J2 = prob.parts(prob.constant_path(alpha))
    assert J1 <= 1e-28 and J2 == 0.0


def test_constant_path_has_no_penalty_gradient(p1):
    # the gradient at a constant path is the tracking part alone
    path = p1.constant_path(0.3 * np.ones(8))
    path.values[0] = p1.alpha0
    g = p1.gradient(path)
    lam_free = Problem1(p1.dipoles, p1.law, p1.target, p1.quad, N=p1.N, lam=1e-300, alpha0=p1.alpha0)
    g0 = lam_free.gradient(path)
    np.testing.assert_allclose(g[1:], g0[1:], rtol=1e-12, atol=1e-300)


def test_tracking_gradient_cubic_at_origin(ring, line_law, line_quad):
    from kelvintrack.motion import ConstantTarget

    prob = Problem1(ring, line_law, ConstantTarget((0.0, 0.0)), line_quad, N=3, lam=1e-3,
                    alpha0=np.zeros(8))
    grads = []
    for eps in (1e-2, 2e-2):
        path = prob.constant_path(0.0)
        path.values[2, 3] = eps
        g = prob.gradient(path)
        pen = prob.lam / prob.tau * eps * np.array([-1.0, 2.0, -1.0])
        np.testing.assert_allclose(g[:, 3] - pen, [0, g[1, 3] - pen[1], 0], atol=1e-18)
        grads.append(g[1, 3] - pen[1])
    # doubling the perturbation multiplies the tracking gradient by 8
    assert grads[1] / grads[0] == pytest.approx(8.0, rel=1e-10)


def test_F_constant_path_penalties_vanish(p2):
    F1, F2, F3, F4 = p2.parts(p2.constant_path())
    assert F3 == 0.0 and F4 == 0.0


def test_F2_linear_in_beta(ring, arc_law, origin_quad, rng):
    a = Problem2(ring, arc_law, origin_quad, M=4, beta=0.1)
    b = Problem2(ring, arc_law, origin_quad, M=4, beta=0.2)
    path = a.unpack(interior_point(a, rng))
    assert b.parts(path)[1] == 2 * a.parts(path)[1]


def test_F2_speed_derivative(ring, arc_law, origin_quad):
    prob = Problem2(ring, arc_law, origin_quad, M=4, beta=0.1, alpha0=np.zeros(8), theta0=1.0)
    path = prob.constant_path(0.0, speed=1.0)
    _, gt = prob.gradient(path)
    # with alpha = 0 and theta = 1: F1 contributes +kappa |D|/2, F2 contributes -beta kappa
    expected = 0.5 * prob.kappa * origin_quad.area - prob.beta * prob.kappa
    np.testing.assert_allclose(gt, expected, rtol=1e-12)


def test_F1_alpha_gradient_zero_at_origin(ring, arc_law, origin_quad):
    prob = Problem2(ring, arc_law, origin_quad, M=4, alpha0=np.zeros(8), theta0=1.0)
    ga, _ = prob.gradient(prob.constant_path(0.0, speed=1.0))
    assert np.all(ga == 0.0)


def test_recover_final_time_examples():
    T, _ = recover_final_time(np.full(81, 2.0), 0.75 / 80)
    assert T == pytest.approx(0.375, rel=1e-15)
    T, t = recover_final_time([1.0, 1.0, 3.0], 0.5)
    assert T == 0.75 and list(t) == [0.0, 0.5, 0.75]
