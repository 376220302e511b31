import numpy as np
import pytest

from src.config import WindConfig
from src.physmodel import YAW_SIGNS, RigidState, hover_thrust, quat_from_rotvec
from src.simworld import BatteryModel, QuadPlant, WindModel, air_density, step_wind

DT = 0.004


def _hover_plant(params, battery, altitude=15.0):
    plant = QuadPlant(params, battery, RigidState(p=np.array([0.0, 0.0, -altitude])))
    plant.thrust = np.full(4, hover_thrust(params))
    setpoint = np.full(4, params.pwm_min + hover_thrust(params) * params.pwm_range)
    return plant, setpoint


def test_air_density_falls_with_altitude():
    assert air_density(0.0) == pytest.approx(1.225)
    assert air_density(1000.0) < air_density(100.0) < air_density(0.0)
    assert air_density(-50.0) == pytest.approx(1.225)


class TestWind:
    def test_zero_sigma_is_constant(self, rng):
        model = WindModel(WindConfig(mean=(2.0, -1.0, 0.0), sigma=(0.0, 0.0, 0.0)), rng)
        for _ in range(10):
            assert model.step().tolist() == [2.0, -1.0, 0.0]

    def test_mean_reversion_bounds_the_walk(self, rng):
        reverting = WindModel(WindConfig(sigma=(6.0, 8.0, 0.0)), rng)
        samples = np.array([reverting.step() for _ in range(20_000)])
        assert samples[:, 2].tolist() == [0.0] * len(samples)
        assert abs(samples[:, 0].mean()) < 2.0
        assert samples[:, 1].std() > samples[:, 0].std() * 0.5

    def test_step_wind_advances_the_model(self):
        cfg = WindConfig(mean=(1.0, 0.0, 0.0), sigma=(6.0, 8.0, 0.0))
        a = WindModel(cfg, np.random.default_rng(5))
        b = WindModel(cfg, np.random.default_rng(5))
        stepped = [step_wind(a) for _ in range(50)]
        direct = [b.step() for _ in range(50)]
        np.testing.assert_array_equal(np.array(stepped), np.array(direct))
        assert not np.array_equal(stepped[0], stepped[-1])


class TestBattery:
    def test_voltage_sags_under_load_and_with_charge(self, sim_params, sim_battery):
        battery = BatteryModel(sim_params, sim_battery)
        v_oc = battery.draw(np.full(4, 0.5), DT)
        assert v_oc == pytest.approx(16.8)
        assert battery.state.current == pytest.approx(24.0)
        assert battery.state.voltage == pytest.approx(16.8 - 0.05 * 24.0)
        for _ in range(10_000):
            battery.draw(np.full(4, 0.5), DT)
        assert battery.open_circuit < 16.8

    def test_open_circuit_floors_at_empty(self, sim_params, sim_battery):
        battery = BatteryModel(sim_params, sim_battery)
        battery.drawn = 2 * sim_battery.capacity
        assert battery.open_circuit == pytest.approx(sim_battery.voltage_empty)


class TestQuadPlant:
    def test_rests_on_ground_before_takeoff(self, sim_params, sim_battery):
        plant = QuadPlant(sim_params, sim_battery)
        for _ in range(100):
            out = plant.step(np.full(4, 1000.0), np.zeros(3), DT)
        assert out.state.p.tolist() == [0.0, 0.0, 0.0]
        assert not plant.airborne and not plant.crashed()

    def test_hover_is_steady(self, sim_params, sim_battery):
        plant, setpoint = _hover_plant(sim_params, sim_battery)
        for _ in range(250):
            out = plant.step(setpoint, np.zeros(3), DT)
        assert plant.airborne
        assert np.abs(out.state.v).max() < 0.01
        assert out.state.p[2] == pytest.approx(-15.0, abs=0.01)
        assert plant.specific_force() == pytest.approx([0.0, 0.0, -9.81], abs=1e-2)

    def test_wind_pushes_the_vehicle(self, realworld_params, sim_battery):
        plant, setpoint = _hover_plant(realworld_params, sim_battery)
        for _ in range(250):
            plant.step(setpoint, np.array([5.0, 0.0, 0.0]), DT)
        assert plant.state.v[0] > 0.1

    def test_inverted_vehicle_has_crashed(self, sim_params, sim_battery):
        plant = QuadPlant(sim_params, sim_battery, RigidState(q=quat_from_rotvec(np.array([3.0, 0.0, 0.0]))))
        assert plant.crashed()

    def test_rotor_gyro_impulse(self, realworld_params, sim_battery):
        plain_params = realworld_params.model_copy(update={"rotor_gyro_coeff": 0.0})
        with_gyro, setpoint = _hover_plant(realworld_params, sim_battery)
        without, _ = _hover_plant(plain_params, sim_battery)
        step = setpoint + 100.0 * (YAW_SIGNS > 0)
        t0 = with_gyro.thrust.copy()
        with_gyro.step(step, np.zeros(3), DT)
        without.step(step, np.zeros(3), DT)
        impulse = 0.061 * float(YAW_SIGNS @ (np.sqrt(with_gyro.thrust) - np.sqrt(t0)))
        dw = with_gyro.state.w - without.state.w
        assert dw[2] == pytest.approx(impulse / realworld_params.inertia_zz, rel=1e-6)
        assert dw[2] > 0
