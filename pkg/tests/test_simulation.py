from dataclasses import fields, replace

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.controller import ControllerGains
from src.dynamics import find_hover
from src.simulation import SimLog, compute_fitness, run_flight, write_log_csv
from src.trajectory import TrajectorySpec


def make_log(n_t, sdot_err=(0.0, 0.0), thrust=25.0, n_p=4, failed=False):
    sdot_d = np.zeros((n_t, 2))
    return SimLog(
        dt=0.01, joint_names=["waist", "elbow"], thruster_names=[f"jet{i}" for i in range(n_p)],
        groups={"torso": [0], "arms": [1]},
        time=0.01 * np.arange(n_t), h=np.zeros((n_t, 6)), h_d=np.zeros((n_t, 6)),
        sdot=sdot_d + np.asarray(sdot_err), sdot_d=sdot_d, T=np.full((n_t, n_p), thrust),
        qp_ok=np.ones(n_t, dtype=bool), qp_active=np.zeros(n_t, dtype=int),
        l_residual=np.zeros(n_t), w_residual=np.zeros(n_t), p_B=np.zeros((n_t, 3)), quat_B=np.zeros((n_t, 4)),
        s=np.zeros((n_t, 2)), nu=np.zeros((n_t, 8)), p_G=np.zeros((n_t, 3)), p_G_d=np.zeros((n_t, 3)),
        failed=failed, cause="QP failure at t = 0.00 s" if failed else "",
    )


def append_perfect_samples(log, k):
    """Copy of the log with k extra samples that track their references exactly."""

    def extend(values, fill=0.0):
        return np.concatenate([values, np.full((k,) + values.shape[1:], fill, dtype=values.dtype)])

    return replace(
        log, time=np.concatenate([log.time, log.time[-1] + log.dt * np.arange(1, k + 1)]),
        h=extend(log.h), h_d=extend(log.h_d), sdot=extend(log.sdot), sdot_d=extend(log.sdot_d),
        T=extend(log.T, log.T[-1, 0]), qp_ok=extend(log.qp_ok, True), qp_active=extend(log.qp_active),
        l_residual=extend(log.l_residual), w_residual=extend(log.w_residual), p_B=extend(log.p_B),
        quat_B=extend(log.quat_B), s=extend(log.s), nu=extend(log.nu), p_G=extend(log.p_G),
        p_G_d=extend(log.p_G_d),
    )


class TestComputeFitness:
    def test_torso_errors_count_twice(self):
        torso = compute_fitness(make_log(3, sdot_err=(1.0, 0.0)))
        arms = compute_fitness(make_log(3, sdot_err=(0.0, 1.0)))
        assert torso.delta_sdot == pytest.approx(18.0)
        assert arms.delta_sdot == pytest.approx(9.0)

    @settings(max_examples=25)
    @given(st.integers(1, 500))
    def test_mean_total_thrust(self, n_t):
        assert compute_fitness(make_log(n_t)).delta_T == pytest.approx(100.0)

    def test_opposite_errors_cancel_unless_squared(self):
        log = make_log(2)
        log.h[0, 0], log.h[1, 0] = 1.0, -1.0
        assert compute_fitness(log).delta_h == 0.0
        assert compute_fitness(log, sum_of_squares=True).delta_h == pytest.approx(2.0)

    def test_failed_flight_has_no_fitness(self):
        with pytest.raises(ValueError, match="undefined"):
            compute_fitness(make_log(3, failed=True))

    def test_perfect_samples_leave_tracking_terms_unchanged(self):
        rng = np.random.default_rng(8)
        log = make_log(6)
        log.h, log.sdot = rng.normal(size=(6, 6)), rng.normal(size=(6, 2))
        padded = append_perfect_samples(log, 10)
        for squared in (False, True):
            before = compute_fitness(log, sum_of_squares=squared)
            after = compute_fitness(padded, sum_of_squares=squared)
            assert after.delta_h == pytest.approx(before.delta_h, rel=1e-12)
            assert after.delta_sdot == pytest.approx(before.delta_sdot, rel=1e-12)


class TestRunFlight:
    def test_short_hover_succeeds(self, hover_model, short_hover):
        gains = ControllerGains.from_dict({}, hover_model.n)
        result = run_flight(hover_model, gains, short_hover)
        assert result.success, result.cause
        assert result.steps == 100
        assert result.log.qp_ok.all()
        fitness = compute_fitness(result.log)
        weight = hover_model.total_mass * abs(hover_model.gravity)
        assert fitness.delta_T == pytest.approx(weight, rel=1e-3)
        np.testing.assert_allclose(result.log.p_G[-1], result.log.p_G[0], atol=1e-3)

    def test_starts_from_given_state(self, hover_model, short_hover):
        gains = ControllerGains.from_dict({}, hover_model.n)
        initial = find_hover(hover_model)
        result = run_flight(hover_model, gains, short_hover, initial=initial)
        assert result.initial_state is initial

    def test_forced_thrust_decrease_fails(self, hover_model):
        gains = ControllerGains.from_dict({}, hover_model.n)
        result = run_flight(hover_model, gains, "hover", u_max_override=-5.0)
        assert not result.success
        assert result.cause
        assert result.log.failed
        assert result.steps < 4200
        with pytest.raises(ValueError):
            compute_fitness(result.log)

    def test_log_csv(self, hover_model, short_hover, tmp_path):
        gains = ControllerGains.from_dict({}, hover_model.n)
        log = run_flight(hover_model, gains, short_hover).log
        path = write_log_csv(log, tmp_path / "sim.csv", "# trajectory: short-hover\n")
        frame = pd.read_csv(path, comment="#")
        assert len(frame) == log.n_t
        assert list(frame.columns) == log.columns()
        assert "T_jet_left" in frame.columns and "sdot_right_pitch_d" in frame.columns

    def test_rerun_is_bit_identical(self, hover_model, short_hover):
        gains = ControllerGains.from_dict({}, hover_model.n)
        first = run_flight(hover_model, gains, short_hover).log
        second = run_flight(hover_model, gains, short_hover).log
        for item in fields(SimLog):
            a, b = getattr(first, item.name), getattr(second, item.name)
            if isinstance(a, np.ndarray):
                np.testing.assert_array_equal(a, b, err_msg=item.name)
            else:
                assert a == b, item.name

    def test_records_the_applied_joint_rate(self, hover_model, short_hover):
        gains = ControllerGains.from_dict({}, hover_model.n)
        log = run_flight(hover_model, gains, short_hover, u_max_override=-5.0).log
        # the joints reach their lower limit and stop although -5 rad/s is still commanded
        assert (log.sdot[:-1] > -5.0 + 1e-9).any()
        np.testing.assert_allclose(log.sdot[:-1], np.diff(log.s, axis=0) / log.dt, atol=1e-9)

    def test_momentum_kick_dies_out(self, model):
        initial = find_hover(model)
        initial.v_B = initial.v_B + np.array([0.1 / model.total_mass, 0.0, 0.0])
        gains = ControllerGains.from_dict({}, model.n, s_ref=initial.s)
        hover = TrajectorySpec.from_segments("hover-5s", [{"action": "hover", "duration": 5.0}])
        result = run_flight(model, gains, hover, initial=initial)
        assert result.success, result.cause
        l_error = np.linalg.norm(result.log.h[:, :3] - result.log.h_d[:, :3], axis=1)
        assert l_error[0] == pytest.approx(0.1, rel=1e-6)
        assert l_error[-1] < 1e-3


@pytest.mark.slow
def test_default_model_hovers_for_the_full_envelope(model):
    gains = ControllerGains.from_dict({}, model.n)
    result = run_flight(model, gains, "hover")
    assert result.success, result.cause
    assert result.steps == 4200
    log = result.log
    settled = log.time >= 2.0
    l_error = np.linalg.norm(log.h[settled, :3] - log.h_d[settled, :3], axis=1)
    assert l_error.max() <= 0.05
    weight = model.total_mass * abs(model.gravity)
    assert compute_fitness(log).delta_T == pytest.approx(weight, rel=0.05)
