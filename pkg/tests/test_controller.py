import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from src.controller import (
    QP_FAILURE,
    Controller,
    ControllerGains,
    QpProblem,
    ReferenceSample,
    build_qp,
    control_bounds,
    control_step,
    desired_angular_dynamics,
    desired_linear_dynamics,
    momentum_jacobians,
    solve_qp,
)
from src.dynamics import (
    RobotState,
    base_velocity,
    centroidal_momentum_matrix,
    exp_so3,
    find_hover,
    forward_kinematics,
    kinematics,
    momentum_rate_from,
)


def still_reference():
    zero = np.zeros(3)
    return ReferenceSample(0.0, zero, zero, zero, np.eye(3), zero, zero, zero)


def random_flight_state(model, rng):
    lower, upper = model.joint_limits()
    return RobotState(
        p_B=rng.normal(size=3),
        R_B=Rotation.random(None, rng).as_matrix(),
        s=rng.uniform(0.8 * lower, 0.8 * upper),
        T=rng.uniform(20.0, 200.0, size=model.n_p),
        v_B=rng.normal(size=3),
        omega_B=rng.normal(size=3),
        sdot=rng.normal(size=model.n),
    )


def momentum_rates_along_flow(model, state, Tdot, sdot, eps=1e-5):
    """Central differences of (l_dot, R_B^T w_dot) along the motion a command produces."""
    kin = forward_kinematics(model, state)
    h = centroidal_momentum_matrix(kin) @ state.nu
    nu_base = base_velocity(kin, h, sdot)

    def rates(sign):
        R = exp_so3(sign * eps * nu_base[3:]) @ state.R_B
        moved = kinematics(model, state.p_B + sign * eps * nu_base[:3], R, state.s + sign * eps * sdot)
        rate = momentum_rate_from(moved, state.T + sign * eps * Tdot, model.gravity)
        return rate[:3], R.T @ rate[3:]

    (l_plus, w_plus), (l_minus, w_minus) = rates(1.0), rates(-1.0)
    return (l_plus - l_minus) / (2 * eps), (w_plus - w_minus) / (2 * eps)


def test_momentum_jacobians_match_finite_differences(model):
    rng = np.random.default_rng(11)
    for _ in range(100):
        state = random_flight_state(model, rng)
        Tdot = rng.uniform(-25.0, 25.0, size=model.n_p)
        sdot = rng.uniform(-1.0, 1.0, size=model.n)
        jac = momentum_jacobians(model, state)
        l_pred, w_pred = jac.predict(Tdot, sdot)
        l_fd, w_fd = momentum_rates_along_flow(model, state, Tdot, sdot)
        assert np.linalg.norm(l_pred - l_fd) <= 1e-5 * max(1.0, np.linalg.norm(l_fd))
        assert np.linalg.norm(w_pred - w_fd) <= 1e-5 * max(1.0, np.linalg.norm(w_fd))


def test_jacobians_report_body_frame_momentum(model):
    rng = np.random.default_rng(5)
    R = Rotation.random(None, rng).as_matrix()
    state = RobotState(np.zeros(3), R, np.zeros(model.n), np.full(model.n_p, 90.0),
                       v_B=rng.normal(size=3), omega_B=rng.normal(size=3))
    jac = momentum_jacobians(model, state)
    kin = forward_kinematics(model, state)
    h = centroidal_momentum_matrix(kin) @ state.nu
    np.testing.assert_allclose(R @ jac.w, h[3:], atol=1e-12)
    np.testing.assert_allclose(jac.l, h[:3], atol=1e-12)


class TestGains:
    def test_defaults_are_valid(self):
        gains = ControllerGains.from_dict({}, 5)
        assert gains.check() == []
        assert gains.K_post.shape == (5, 5)

    def test_non_positive_gain_reported(self):
        gains = ControllerGains.from_dict({"K_P": [1.0, -1.0, 1.0]}, 2)
        assert "K_P is not symmetric positive definite" in gains.check()

    def test_wrong_vector_length(self):
        with pytest.raises(ValueError, match="needs 3 entries"):
            ControllerGains.from_dict({"K_D": [1.0, 2.0]}, 2)


class TestDesiredDynamics:
    def test_zero_error_returns_feed_forward(self):
        gains = ControllerGains.from_dict({}, 2)
        l = np.array([1.0, 2.0, 3.0])
        ff = np.array([0.1, -0.2, 0.3])
        integral = np.zeros(3)
        np.testing.assert_allclose(desired_linear_dynamics(l, l, ff, ff, ff, integral, gains), ff)
        R = Rotation.from_rotvec([0.1, 0.2, 0.3]).as_matrix()
        np.testing.assert_allclose(desired_angular_dynamics(R, R, l, l, ff, ff, ff, gains), ff, atol=1e-15)

    def test_attitude_error_pushes_back(self):
        gains = ControllerGains.from_dict({}, 2)
        zero = np.zeros(3)
        R_B = Rotation.from_rotvec([0.0, 0.0, 0.2]).as_matrix()
        w_ddot = desired_angular_dynamics(R_B, np.eye(3), zero, zero, zero, zero, zero, gains)
        np.testing.assert_allclose(w_ddot, [0.0, 0.0, -20.0 * 0.2], atol=1e-12)

    def test_quarter_yaw_error(self):
        gains = ControllerGains.from_dict({"K_Pw": 1.0, "K_Dw": 1.0, "K_R": 3.0}, 2)
        zero = np.zeros(3)
        R_B = Rotation.from_rotvec([0.0, 0.0, 0.5 * np.pi]).as_matrix()
        w_ddot = desired_angular_dynamics(R_B, np.eye(3), zero, zero, zero, zero, zero, gains)
        np.testing.assert_allclose(w_ddot, [0.0, 0.0, -0.5 * np.pi * 3.0], atol=1e-12)


def projected_gradient(problem, iterations=1000):
    step = 1.0 / np.linalg.eigvalsh(problem.H).max()
    x = np.clip(np.zeros(len(problem.c)), problem.lower, problem.upper)
    for _ in range(iterations):
        x = np.clip(x - step * (problem.H @ x + problem.c), problem.lower, problem.upper)
    return x


def random_problem(rng):
    m = int(rng.integers(2, 10))
    A = rng.normal(size=(m, m)) / np.sqrt(m)
    H = A.T @ A + 0.5 * np.eye(m)
    c = rng.normal(scale=3.0, size=m)
    lower = -rng.uniform(0.1, 2.0, size=m)
    upper = rng.uniform(0.1, 2.0, size=m)
    return QpProblem(H, c, lower, upper)


class TestSolveQp:
    def test_matches_projected_gradient_oracle(self):
        rng = np.random.default_rng(2024)
        for _ in range(500):
            problem = random_problem(rng)
            solution = solve_qp(problem)
            assert solution.success, solution.cause
            oracle = projected_gradient(problem)
            assert problem.objective(solution.u) <= problem.objective(oracle) + 1e-8
            u = solution.u
            assert np.all(u >= problem.lower) and np.all(u <= problem.upper)
            gradient = problem.H @ u + problem.c
            stationarity = u - np.clip(u - gradient, problem.lower, problem.upper)
            assert np.abs(stationarity).max() <= 1e-8

    def test_interior_optimum(self):
        H = np.array([[2.0, 0.5], [0.5, 1.0]])
        c = np.array([-1.0, 0.5])
        solution = solve_qp(QpProblem(H, c, np.full(2, -10.0), np.full(2, 10.0)))
        np.testing.assert_allclose(solution.u, np.linalg.solve(H, -c), atol=1e-12)
        assert solution.active == 0

    def test_pinned_variables(self):
        problem = QpProblem(np.eye(3), np.array([1.0, -1.0, 0.0]), np.array([0.5, -1.0, -1.0]),
                            np.array([0.5, 1.0, 1.0]))
        solution = solve_qp(problem)
        assert solution.success
        np.testing.assert_allclose(solution.u, [0.5, 1.0, 0.0], atol=1e-12)

    def test_inconsistent_bounds_fail(self):
        problem = QpProblem(np.eye(2), np.zeros(2), np.array([1.0, 0.0]), np.array([0.0, 1.0]))
        solution = solve_qp(problem)
        assert solution.status == QP_FAILURE
        assert "lower bound above upper bound" in solution.cause

    def test_non_finite_data_fail(self):
        problem = QpProblem(np.eye(2), np.array([np.nan, 0.0]), -np.ones(2), np.ones(2))
        assert not solve_qp(problem).success

    def test_clamped_one_dimensional_minimum(self):
        # min (u - 3)^2 over [0, 2]
        solution = solve_qp(QpProblem(np.array([[2.0]]), np.array([-6.0]), np.array([0.0]), np.array([2.0])))
        assert solution.success
        np.testing.assert_array_equal(solution.u, [2.0])
        assert solution.active == 1
        assert solution.residual == 0.0

    def test_certificate_is_absolute_on_scaled_problems(self):
        rng = np.random.default_rng(99)
        for _ in range(200):
            base = random_problem(rng)
            problem = QpProblem(1e3 * base.H, 1e3 * base.c, base.lower, base.upper)
            solution = solve_qp(problem)
            assert solution.success, solution.cause
            assert solution.residual <= 1e-8
            u = solution.u
            gradient = problem.H @ u + problem.c
            stationarity = u - np.clip(u - gradient, problem.lower, problem.upper)
            assert np.abs(stationarity).max() <= 1e-8


class TestBuildQp:
    def test_hessian_is_symmetric_psd(self, model):
        rng = np.random.default_rng(17)
        gains = ControllerGains.from_dict({}, model.n)
        bounds = -np.ones(model.n_p + model.n), np.ones(model.n_p + model.n)
        for _ in range(100):
            jac = momentum_jacobians(model, random_flight_state(model, rng))
            problem = build_qp(jac, rng.normal(size=3), rng.normal(size=3), rng.normal(size=model.n),
                               gains, *bounds)
            np.testing.assert_array_equal(problem.H, problem.H.T)
            assert np.linalg.eigvalsh(problem.H).min() >= -1e-10 * np.abs(problem.H).max()

    def test_objective_is_the_weighted_task_error(self, model):
        rng = np.random.default_rng(23)
        gains = ControllerGains.from_dict({"weights": [1.0, 2.0, 0.1]}, model.n)
        lam = gains.weights
        n_p = model.n_p
        bounds = -np.ones(n_p + model.n), np.ones(n_p + model.n)
        for _ in range(20):
            jac = momentum_jacobians(model, random_flight_state(model, rng))
            l_star, w_star, s_star = rng.normal(size=3), rng.normal(size=3), rng.normal(size=model.n)
            problem = build_qp(jac, l_star, w_star, s_star, gains, *bounds)

            def task_error(u):
                l_ddot, w_ddot = jac.predict(u[:n_p], u[n_p:])
                return (lam[0] * np.sum((l_ddot - l_star) ** 2) + lam[1] * np.sum((w_ddot - w_star) ** 2)
                        + lam[2] * np.sum((u[n_p:] - s_star) ** 2) + gains.epsilon * u @ u)

            u = rng.normal(size=n_p + model.n)
            expected = 0.5 * (task_error(u) - task_error(np.zeros_like(u)))
            scale = 1.0 + task_error(u) + task_error(np.zeros_like(u))
            assert problem.objective(u) == pytest.approx(expected, abs=1e-9 * scale)


class TestControlStep:
    def test_hover_needs_no_command(self, hover_model):
        state = find_hover(hover_model)
        gains = ControllerGains.from_dict({}, hover_model.n, s_ref=state.s)
        result = control_step(hover_model, state, still_reference(), gains, 0.01)
        assert result.success
        np.testing.assert_allclose(result.u, 0.0, atol=1e-6)
        assert result.l_residual < 1e-6

    def test_bounds_respect_limits(self, hover_model):
        state = find_hover(hover_model)
        lower, upper = control_bounds(hover_model, state, 0.01)
        assert np.all(lower <= upper)
        np.testing.assert_allclose(upper[:2], 25.0)
        np.testing.assert_allclose(upper[2:], 2.0)
        _, capped = control_bounds(hover_model, state, 0.01, u_max_override=0.0)
        assert np.all(capped <= 0.0)

    def test_qp_dimension_mismatch(self, hover_model):
        state = find_hover(hover_model)
        jac = momentum_jacobians(hover_model, state)
        gains = ControllerGains.from_dict({}, hover_model.n)
        with pytest.raises(ValueError, match="dimension mismatch"):
            build_qp(jac, np.zeros(3), np.zeros(3), np.zeros(3), gains, np.zeros(4), np.zeros(4))

    def test_integral_accumulates_linear_error(self, hover_model):
        state = find_hover(hover_model)
        gains = ControllerGains.from_dict({}, hover_model.n, s_ref=state.s)
        controller = Controller(hover_model, gains, 0.01)
        reference = still_reference()
        reference.l_d = np.array([1.0, 0.0, 0.0])
        controller(state, reference)
        np.testing.assert_allclose(controller.integral, [-0.01, 0.0, 0.0], atol=1e-12)
        controller.reset()
        assert not controller.integral.any()
