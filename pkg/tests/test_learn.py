import math

import numpy as np
import pandas as pd
import pytest

from src.config import FIT_RANGES, REALWORLD_BATTERY, BatteryConfig, load_vehicle
from src.flightlog import FlightLog
from src.learn import (
    LEARNED, FitData, FitError, FitResult, FitWarning, LearnResult, SimplexConfig, control_prediction,
    drag_prediction, fit_data, fit_drag_params, fit_time_constant, generate_sysid_log, learn_from_logs,
    learn_parameters, nelder_mead, rate_prediction, rotor_gyro_cost, rotor_thrust, write_vehicle_fragment,
)
from src.scenario import realworld_vehicle

DT = 0.004


def _data(n=2000, v=None, cmd=None, params=None):
    params = params or realworld_vehicle()
    t = np.arange(n) * DT
    q = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
    return FitData(
        t=t, q=q,
        v=np.zeros((n, 3)) if v is None else v,
        w=np.zeros((n, 3)),
        rho=np.full(n, 1.2),
        wind=np.zeros((n, 3)),
        force=np.zeros((n, 3)),
        cmd=np.full((n, 4), 1500.0) if cmd is None else cmd,
        voltage=np.full(n, params.voltage_ref),
        current=np.zeros(n),
        airborne=np.ones(n, dtype=bool),
    )


class TestNelderMead:
    def test_quadratic(self):
        res = nelder_mead(lambda x: float(np.sum((x - [1.0, 2.0]) ** 2)), [0.0, 0.0])
        assert res.converged
        np.testing.assert_allclose(res.x, [1.0, 2.0], atol=1e-6)

    def test_rosenbrock(self):
        def rosen(x):
            return float(100.0 * (x[1] - x[0] ** 2) ** 2 + (1.0 - x[0]) ** 2)

        res = nelder_mead(rosen, [-1.2, 1.0], SimplexConfig(scale=0.5))
        np.testing.assert_allclose(res.x, [1.0, 1.0], atol=1e-4)
        assert res.value < 1e-8

    def test_nan_objective(self):
        with pytest.raises(FitError):
            nelder_mead(lambda x: float("nan"), [0.5])

    def test_iteration_limit(self):
        res = nelder_mead(lambda x: float(np.sum((x - 3.0) ** 2)), [0.0, 0.0, 0.0], SimplexConfig(max_iter=3))
        assert not res.converged
        assert res.iterations <= 3


class TestModel:
    def test_rotor_thrust_step(self):
        u = np.ones((5, 1))
        thrust = rotor_thrust(u, 0.02, DT)[:, 0]
        alpha = math.exp(-DT / 0.02)
        assert thrust[0] == 0.0
        np.testing.assert_allclose(thrust[1:], 1.0 - alpha ** np.arange(1, 5))

    def test_drag_opposes_airspeed(self):
        v = np.tile([2.0, -1.0, 0.0], (10, 1))
        drag = drag_prediction(_data(10, v=v), 0.03, 0.2, 0.2)
        assert np.all(drag[:, 0] < 0) and np.all(drag[:, 1] > 0)
        assert np.all(drag[:, 2] == 0.0)

    def test_hover_command_balances_gravity(self):
        params = realworld_vehicle()
        hover = params.pwm_min + params.pwm_range * params.mass * params.gravity / (4 * params.thrust_coeff)
        data = _data(3000, cmd=np.full((3000, 4), hover))
        pred = control_prediction(data, params, params.time_constant)
        assert pred[-1] == pytest.approx(-params.gravity, rel=1e-6)

    def test_rotor_gyro_needs_yaw_excitation(self):
        params = realworld_vehicle()
        data = _data(200)
        assert rotor_gyro_cost(data, params, 0.0) == pytest.approx(rotor_gyro_cost(data, params, 0.2))
        np.testing.assert_allclose(rate_prediction(data, params, 0.1), 0.0, atol=1e-9)


class TestFits:
    def test_drag_recovered(self):
        t = np.arange(3000) * DT
        v = np.column_stack([3.0 * np.sin(0.8 * t), 2.0 * np.cos(0.5 * t), np.zeros_like(t)])
        data = _data(3000, v=v)
        data.force = drag_prediction(data, 0.03, 0.2, 0.3)
        result = fit_drag_params(data)
        assert not result.ill_conditioned
        assert result.values["momentum_drag"] == pytest.approx(0.03, rel=1e-3)
        assert result.values["ballistic_x"] == pytest.approx(0.2, rel=1e-3)
        assert result.values["ballistic_y"] == pytest.approx(0.3, rel=1e-3)

    def test_drag_without_airspeed_is_flagged(self):
        with pytest.warns(FitWarning):
            result = fit_drag_params(_data(200))
        assert result.ill_conditioned
        assert "airspeed" in result.notes[0]

    def test_time_constant_recovered(self):
        params = realworld_vehicle()
        n = 2000
        level = np.where((np.arange(n) // 100) % 2 == 0, 1450.0, 1650.0)
        data = _data(n, cmd=np.tile(level[:, None], (1, 4)), params=params)
        data.force[:, 2] = control_prediction(data, params, 0.02)
        result = fit_time_constant(data, params)
        assert result.values["time_constant"] == pytest.approx(0.02, rel=1e-3)

    def test_constant_thrust_is_flagged(self):
        with pytest.warns(FitWarning):
            result = fit_time_constant(_data(200), realworld_vehicle())
        assert result.ill_conditioned


class TestFitData:
    def test_missing_columns(self):
        log = FlightLog(pd.DataFrame({"t": np.arange(5) * DT}))
        with pytest.raises(FitError, match="true_qw"):
            fit_data(log, source="true")

    def test_default_source_is_the_estimate(self):
        """Test fits default to the logged estimate and raw IMU readings, not the simulator truth."""
        log = FlightLog(pd.DataFrame({"t": np.arange(5) * DT}))
        with pytest.raises(FitError, match="ref_qw"):
            fit_data(log)
        with pytest.raises(FitError, match="ref_qw"):
            learn_parameters(log, realworld_vehicle())
        with pytest.raises(FitError, match="ref_qw"):
            learn_from_logs([log], realworld_vehicle())

    def test_unknown_source(self):
        log = FlightLog(pd.DataFrame({"t": np.arange(5) * DT}))
        with pytest.raises(ValueError):
            fit_data(log, source="optical")


def test_vehicle_fragment_loads_back(tmp_path):
    params = realworld_vehicle().model_copy(update={"momentum_drag": 0.04})
    fits = [FitResult("drag", {"momentum_drag": 0.04}, 0.01, 120, True),
            FitResult("rotor_gyro", {"rotor_gyro_coeff": 0.06}, 0.2, 80, True, ill_conditioned=True)]
    result = LearnResult(params, fits)
    assert result.ill_conditioned
    assert result.values()["momentum_drag"] == 0.04

    battery = BatteryConfig(**REALWORLD_BATTERY)
    path = write_vehicle_fragment(tmp_path / "learned.ini", result, battery)
    loaded, loaded_battery = load_vehicle(path)
    assert loaded.momentum_drag == pytest.approx(0.04)
    assert loaded.mass == pytest.approx(params.mass)
    assert loaded_battery.capacity == pytest.approx(battery.capacity)
    assert "(ill-conditioned)" in path.read_text()


@pytest.mark.slow
class TestSysidRecovery:
    @pytest.fixture(scope="class")
    def truth(self):
        """Fixture providing the parameters the excitation flights are simulated with."""
        return realworld_vehicle()

    @pytest.fixture(scope="class")
    def base(self, truth):
        """Fixture providing a starting vehicle with the learned values knocked off."""
        return truth.model_copy(update={"momentum_drag": 0.0, "ballistic_x": 0.4, "ballistic_y": 0.0,
                                        "time_constant": 0.08, "rotor_gyro_coeff": 0.0})

    def test_noiseless_flight(self, truth, base):
        """Test every learned value lands within 10% of the truth on a noise-free flight."""
        log = generate_sysid_log(truth, seed=3, noise=False)
        learned = learn_parameters(log, base, source="true").values()
        for name in LEARNED:
            lo, hi = FIT_RANGES[name]
            assert lo <= learned[name] <= hi
            assert learned[name] == pytest.approx(getattr(truth, name), rel=0.1), name

    def test_noisy_flights(self, truth, base):
        """Test the values averaged over twenty noisy flights land within 25% of the truth."""
        logs = [generate_sysid_log(truth, seed=seed, noise=True) for seed in range(20)]
        learned = learn_from_logs(logs, base).values()
        for name in LEARNED:
            assert learned[name] == pytest.approx(getattr(truth, name), rel=0.25), name
