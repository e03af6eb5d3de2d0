import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from src.dynamics import (
    DivergenceError,
    RobotState,
    base_velocity,
    centroidal_momentum,
    centroidal_momentum_matrix,
    exp_so3,
    find_hover,
    forward_kinematics,
    initial_state,
    kinematics,
    locked_inertia,
    log_so3,
    momentum_rate,
    orthonormalize,
    step,
    to_body_frame,
    to_inertial_frame,
)


def random_state(model, rng):
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


class TestSo3:
    @settings(max_examples=50)
    @given(st.lists(st.floats(-1.5, 1.5), min_size=3, max_size=3))
    def test_exp_log_round_trip(self, phi):
        phi = np.array(phi)
        np.testing.assert_allclose(log_so3(exp_so3(phi)), phi, atol=1e-9)

    def test_orthonormalize_repairs_drift(self):
        R = Rotation.from_rotvec([0.3, -0.2, 0.5]).as_matrix() + 1e-6
        Q = orthonormalize(R)
        np.testing.assert_allclose(Q.T @ Q, np.eye(3), atol=1e-14)
        assert np.linalg.det(Q) == pytest.approx(1.0)

    def test_frame_round_trip(self):
        rng = np.random.default_rng(3)
        R = Rotation.random(None, rng).as_matrix()
        v = rng.normal(size=3)
        np.testing.assert_allclose(to_inertial_frame(R, to_body_frame(R, v)), v, atol=1e-12)


class TestMomentum:
    def test_gravity_only_rate_is_exact(self, model):
        state = initial_state(model)
        kin = forward_kinematics(model, state)
        rate = momentum_rate(model, state)
        np.testing.assert_array_equal(rate[:3], kin.mass * model.gravity * np.array([0.0, 0.0, 1.0]))
        np.testing.assert_array_equal(rate[3:], np.zeros(3))

    def test_linear_momentum_is_mass_times_com_velocity(self, model):
        rng = np.random.default_rng(0)
        eps = 1e-6
        for _ in range(10):
            state = random_state(model, rng)
            h = centroidal_momentum(model, state)

            def com(sign):
                return kinematics(model, state.p_B + sign * eps * state.v_B,
                                  exp_so3(sign * eps * state.omega_B) @ state.R_B,
                                  state.s + sign * eps * state.sdot).p_G

            velocity = (com(1) - com(-1)) / (2 * eps)
            np.testing.assert_allclose(h[:3], model.total_mass * velocity, rtol=1e-6, atol=1e-8)

    def test_base_velocity_inverts_the_momentum_map(self, model):
        rng = np.random.default_rng(1)
        state = random_state(model, rng)
        kin = forward_kinematics(model, state)
        h = centroidal_momentum_matrix(kin) @ state.nu
        nu_base = base_velocity(kin, h, state.sdot)
        np.testing.assert_allclose(nu_base, np.concatenate([state.v_B, state.omega_B]), atol=1e-10)

    def test_locked_inertia_is_spd(self, model):
        rng = np.random.default_rng(2)
        kin = forward_kinematics(model, random_state(model, rng))
        inertia = locked_inertia(kin)
        np.testing.assert_allclose(inertia, inertia.T, atol=1e-14)
        assert np.linalg.eigvalsh(inertia).min() > 0

    def test_rigid_rotation_momentum(self, model):
        state = initial_state(model)
        state.omega_B = np.array([0.0, 0.0, 0.7])
        kin = forward_kinematics(model, state)
        expected = locked_inertia(kin) @ state.omega_B
        np.testing.assert_allclose(centroidal_momentum(model, state)[3:], expected, atol=1e-10)


class TestHover:
    def test_symmetric_model(self, hover_model):
        state = find_hover(hover_model)
        weight = hover_model.total_mass * abs(hover_model.gravity)
        np.testing.assert_allclose(state.T, [0.5 * weight, 0.5 * weight], rtol=1e-6)
        np.testing.assert_allclose(state.s, 0.0, atol=1e-6)

    def test_default_model(self, model):
        state = find_hover(model)
        weight = model.total_mass * abs(model.gravity)
        assert np.linalg.norm(momentum_rate(model, state)) <= 1e-8 * weight
        lower, upper = model.thrust_limits()
        assert np.all(state.T >= lower) and np.all(state.T <= upper)


class TestStep:
    def test_free_fall(self, hover_model):
        state = initial_state(hover_model)
        dt, steps = 0.01, 50
        start = forward_kinematics(hover_model, state).p_G
        for _ in range(steps):
            state = step(hover_model, state, np.zeros(hover_model.n_p + hover_model.n), dt)
        t = dt * steps
        drop = forward_kinematics(hover_model, state).p_G - start
        np.testing.assert_allclose(drop, [0.0, 0.0, 0.5 * hover_model.gravity * t * t], atol=1e-9)
        assert state.t == pytest.approx(t)

    def test_hover_is_an_equilibrium(self, hover_model):
        state = find_hover(hover_model)
        for _ in range(20):
            state = step(hover_model, state, np.zeros(hover_model.n_p + hover_model.n), 0.01)
        np.testing.assert_allclose(state.p_B, 0.0, atol=1e-7)
        np.testing.assert_allclose(state.R_B, np.eye(3), atol=1e-7)

    def test_limits_hold(self, hover_model):
        state = find_hover(hover_model)
        u = np.concatenate([np.full(hover_model.n_p, 1e4), np.full(hover_model.n, 50.0)])
        state = step(hover_model, state, u, 0.01)
        _, t_max = hover_model.thrust_limits()
        _, s_max = hover_model.joint_limits()
        assert np.all(state.T <= t_max)
        assert np.all(state.s <= s_max)

    def test_rotation_stays_orthonormal(self, model):
        rng = np.random.default_rng(4)
        state = random_state(model, rng)
        u = np.zeros(model.n_p + model.n)
        for _ in range(10):
            state = step(model, state, u, 0.01)
        np.testing.assert_allclose(state.R_B.T @ state.R_B, np.eye(3), atol=1e-12)

    def test_bad_arguments(self, hover_model):
        state = initial_state(hover_model)
        with pytest.raises(ValueError, match="dt"):
            step(hover_model, state, np.zeros(4), 0.0)
        with pytest.raises(ValueError, match="entries"):
            step(hover_model, state, np.zeros(3), 0.01)
        with pytest.raises(DivergenceError):
            step(hover_model, state, np.array([np.nan, 0.0, 0.0, 0.0]), 0.01)


class TestConservation:
    def test_angular_momentum_without_thrust(self, hover_model):
        state = initial_state(hover_model, T=np.zeros(hover_model.n_p))
        state.omega_B = np.array([0.4, -0.3, 0.9])
        state.v_B = np.array([0.5, 0.0, 1.0])
        w0 = centroidal_momentum(hover_model, state)[3:]
        u = np.zeros(hover_model.n_p + hover_model.n)
        for _ in range(1000):
            state = step(hover_model, state, u, 0.01)
        w = centroidal_momentum(hover_model, state)[3:]
        assert np.linalg.norm(w - w0) <= 1e-6 * np.linalg.norm(w0)

    def test_rotation_drift_over_many_steps(self, hover_model):
        state = initial_state(hover_model, T=np.zeros(hover_model.n_p))
        state.omega_B = np.array([1.3, -0.7, 2.1])
        u = np.zeros(hover_model.n_p + hover_model.n)
        for _ in range(2000):
            state = step(hover_model, state, u, 0.01)
        assert np.abs(state.R_B.T @ state.R_B - np.eye(3)).max() <= 1e-9
        assert np.linalg.det(state.R_B) == pytest.approx(1.0, abs=1e-9)

    @pytest.mark.slow
    def test_rotation_drift_over_a_long_horizon(self, hover_model):
        state = initial_state(hover_model, T=np.zeros(hover_model.n_p))
        state.omega_B = np.array([1.3, -0.7, 2.1])
        u = np.zeros(hover_model.n_p + hover_model.n)
        for _ in range(100_000):
            state = step(hover_model, state, u, 0.01)
        assert np.abs(state.R_B.T @ state.R_B - np.eye(3)).max() <= 1e-9


@settings(max_examples=30, deadline=None)
@given(st.floats(-10.0, 10.0, allow_nan=False), st.integers(0, 1000))
def test_momentum_is_linear_in_velocity(model, alpha, seed):
    state = random_state(model, np.random.default_rng(seed))
    scaled = state.copy()
    scaled.v_B, scaled.omega_B, scaled.sdot = alpha * state.v_B, alpha * state.omega_B, alpha * state.sdot
    h = centroidal_momentum(model, state)
    np.testing.assert_allclose(centroidal_momentum(model, scaled), alpha * h, rtol=1e-12,
                               atol=1e-12 * np.abs(h).max())
