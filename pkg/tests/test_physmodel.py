import math

import numpy as np
import pytest

from src.physmodel import (
    PITCH_SIGNS, ROLL_SIGNS, YAW_SIGNS, BatteryState, ModelPredictor, RigidState, ThrustState,
    allocation_matrix, angular_acceleration, battery_factor, control_wrench, drag_acceleration, euler_angles,
    hover_thrust, integrate_quaternion, normalized_thrust_setpoint, propagate, quat_from_matrix,
    quat_from_rotvec, rotation_matrix, update_thrust_estimate,
)

DT = 0.004


class TestQuaternions:
    def test_yaw_turns_body_forward_to_east(self):
        q = quat_from_rotvec(np.array([0.0, 0.0, math.pi / 2]))
        assert np.allclose(rotation_matrix(q) @ [1.0, 0.0, 0.0], [0.0, 1.0, 0.0])
        assert euler_angles(q)[2] == pytest.approx(math.pi / 2)

    def test_matrix_conversion_inverts(self):
        q = quat_from_rotvec(np.array([0.3, -0.2, 2.5]))
        assert np.allclose(quat_from_matrix(rotation_matrix(q)), q)

    def test_integration_stays_unit(self):
        q = np.array([1.0, 0.0, 0.0, 0.0])
        for _ in range(1000):
            q = integrate_quaternion(q, np.array([0.5, -1.0, 2.0]), DT)
        assert np.linalg.norm(q) == pytest.approx(1.0)

    def test_constant_roll_rate(self):
        q = np.array([1.0, 0.0, 0.0, 0.0])
        for _ in range(250):
            q = integrate_quaternion(q, np.array([0.2, 0.0, 0.0]), DT)
        assert euler_angles(q)[0] == pytest.approx(0.2)


class TestThrust:
    def test_battery_factor(self, sim_params):
        assert battery_factor(BatteryState(16.8), sim_params) == pytest.approx(1.0)
        assert battery_factor(BatteryState(16.3, 10.0), sim_params) == pytest.approx((16.3 + 0.5) / 16.8)
        assert battery_factor(BatteryState(1.0), sim_params.coarse()) == 1.0

    def test_setpoint_normalization(self, sim_params):
        rel = normalized_thrust_setpoint([900.0, 1000.0, 1500.0, 2000.0], BatteryState(16.8), sim_params)
        assert rel.tolist() == pytest.approx([0.0, 0.0, 0.5, 1.0])

    def test_first_update_starts_at_command(self, sim_params):
        state = update_thrust_estimate(None, np.full(4, 0.4), DT, sim_params)
        assert state.thrust.tolist() == [0.4] * 4

    def test_first_order_lag(self, realworld_params):
        state = ThrustState(np.zeros(4), np.zeros(4))
        state = update_thrust_estimate(state, np.ones(4), DT, realworld_params)
        alpha = math.exp(-DT / 0.035)
        assert state.thrust[0] == pytest.approx(1.0 - alpha)
        assert state.prev.tolist() == [0.0] * 4

    def test_no_lag_when_disabled(self, realworld_params):
        state = ThrustState(np.zeros(4), np.zeros(4))
        state = update_thrust_estimate(state, np.ones(4), DT, realworld_params.coarse())
        assert state.thrust.tolist() == [1.0] * 4

    def test_rejects_bad_step(self, sim_params):
        with pytest.raises(ValueError):
            update_thrust_estimate(None, np.ones(4), 0.0, sim_params)


class TestWrench:
    def test_hover_balances_gravity(self, sim_params):
        a_ctrl, tau = control_wrench(ThrustState.hover(sim_params), DT, sim_params)
        assert a_ctrl.tolist() == pytest.approx([0.0, 0.0, -9.81])
        assert np.allclose(tau, 0.0)
        nxt = propagate(RigidState(p=np.array([0.0, 0.0, -15.0])), a_ctrl, np.zeros(3), np.zeros(3), DT, sim_params)
        assert np.allclose(nxt.a, 0.0)

    def test_sign_arrays_are_decoupled(self):
        assert ROLL_SIGNS @ PITCH_SIGNS == 0 and ROLL_SIGNS @ YAW_SIGNS == 0 and PITCH_SIGNS @ YAW_SIGNS == 0

    def test_differential_thrust_rolls_only(self, sim_params):
        t = hover_thrust(sim_params) + 0.01 * ROLL_SIGNS
        _, tau = control_wrench(ThrustState(t, t), DT, sim_params)
        assert tau[0] > 0 and tau[1] == pytest.approx(0.0) and tau[2] == pytest.approx(0.0)
        assert allocation_matrix(sim_params)[0].tolist() == [4.0] * 4

    def test_rotor_gyro_torque(self, realworld_params):
        prev = np.full(4, 0.25)
        now = prev + 0.05 * (YAW_SIGNS > 0)
        _, tau = control_wrench(ThrustState(now, prev), DT, realworld_params)
        expected = realworld_params.torque_coeff * (YAW_SIGNS @ now) + \
            0.061 * float(YAW_SIGNS @ (np.sqrt(now) - np.sqrt(prev))) / DT
        assert tau[2] == pytest.approx(expected)


class TestDrag:
    def test_zero_at_rest(self, realworld_params):
        assert np.allclose(drag_acceleration(np.zeros(3), 1.225, realworld_params), 0.0)

    def test_opposes_airspeed(self, realworld_params):
        v = np.array([5.0, 0.0, 0.0])
        drag = drag_acceleration(v, 1.225, realworld_params)
        assert drag[0] == pytest.approx(-(0.031 * 5.0 + 0.5 * 1.225 * 0.161 * 25.0))
        assert drag[2] == 0.0

    def test_vertical_has_momentum_drag_only(self, realworld_params):
        drag = drag_acceleration(np.array([0.0, 0.0, 2.0]), 1.225, realworld_params)
        assert drag[2] == pytest.approx(-0.062)

    def test_density_must_be_positive(self, sim_params):
        with pytest.raises(ValueError):
            drag_acceleration(np.ones(3), 0.0, sim_params)

    def test_predictor_drag_uses_relative_wind(self, realworld_params):
        predictor = ModelPredictor(realworld_params, DT)
        still = predictor.drag(np.array([1.0, 0.0, 0.0, 0.0]), np.array([3.0, 0.0, 0.0]), np.array([3.0, 0.0, 0.0]), 1.225)
        assert np.allclose(still, 0.0)


def test_gyroscopic_coupling(realworld_params):
    w = np.array([1.0, 1.0, 0.0])
    w_dot = angular_acceleration(w, np.zeros(3), realworld_params)
    jw = realworld_params.inertia @ w
    assert np.allclose(realworld_params.inertia @ w_dot, np.cross(jw, w))
    assert np.allclose(angular_acceleration(np.array([0.0, 0.0, 3.0]), np.zeros(3), realworld_params), 0.0)


def test_predictor_holds_hover(sim_params):
    predictor = ModelPredictor(sim_params, DT)
    predictor.reset_hover()
    setpoint = np.full(4, sim_params.pwm_min + hover_thrust(sim_params) * sim_params.pwm_range)
    for _ in range(50):
        a_ctrl, tau = predictor.step(setpoint, BatteryState(16.8))
    assert a_ctrl[2] == pytest.approx(-9.81)
    assert np.allclose(tau, 0.0)
