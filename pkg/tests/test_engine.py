import numpy as np
import pytest

import src.engine as engine_module
from src.attacks import parse_notation
from src.batch import OUTCOME_COLUMNS
from src.engine import EXIT_CODES, FlightEngine, fly, rng_streams


def test_rng_streams_are_reproducible_and_independent():
    a, b = rng_streams(5), rng_streams(5)
    assert a["wind"].normal() == b["wind"].normal()
    assert rng_streams(5)["wind"].normal() != rng_streams(5)["sensors"].normal()


def test_exit_codes():
    assert EXIT_CODES == {"mission_complete": 0, "time_limit": 0, "crash": 3, "divergence": 4}


class TestShortFlight:
    @pytest.fixture
    def result(self, short_scenario):
        """Fixture flying three seconds of the hovering mission."""
        return fly(short_scenario(time_limit=3.0))

    def test_terminal_condition(self, result):
        assert result.terminal == "time_limit"
        assert result.exit_code == 0
        assert result.t_end == pytest.approx(3.0, abs=0.01)

    def test_takes_off(self, result):
        assert result.log.column("true_pd").min() < -0.5

    def test_log_columns(self, result):
        columns = set(result.log.frame.columns)
        for name in ("t", "true_pn", "true_an", "ref_qw", "est_wz", "ctl_pd", "cmd_4", "bat_v", "rho",
                     "wind_n", "alarm_imu2", "src_angular_velocity", "ctl_source", "attack_active", "fused",
                     "meas_imu0_gyro_0", "res_imu0_gyro_0", "rescs_imu0_gyro_0", "score_baro1_baro"):
            assert name in columns
        assert len(result.log.frame) in (750, 751)

    def test_no_alarms_without_attack(self, result):
        assert result.alarms == {}
        assert set(result.classes.values()) == {"TN"}
        assert result.ttd is None and result.recovery is None

    def test_meta(self, result):
        meta = result.log.meta
        assert meta["seed"] == 7 and meta["attack"] == "none" and meta["terminal"] == "time_limit"

    def test_outcome_row_matches_batch_columns(self, result):
        row = result.outcome_row()
        assert set(row) | {"variant", "log"} == set(OUTCOME_COLUMNS)
        assert row["attack"] == "none" and row["detected"] is False

    def test_roc_flags_shape(self, result, short_scenario):
        assert len(result.roc) == short_scenario().eval.roc_points
        assert not result.roc["detected"].any()


def test_same_seed_same_flight(short_scenario):
    first = fly(short_scenario(time_limit=1.0, seed=3))
    second = fly(short_scenario(time_limit=1.0, seed=3))
    assert np.array_equal(first.log.column("true_pd"), second.log.column("true_pd"))
    third = fly(short_scenario(time_limit=1.0, seed=4))
    assert not np.array_equal(first.log.column("meas_imu0_gyro_0"), third.log.column("meas_imu0_gyro_0"))


def test_unrecorded_flight_has_no_log(short_scenario):
    result = fly(short_scenario(time_limit=0.5), record=False)
    assert result.log is None


def test_attack_waiting_for_waypoint_never_starts(short_scenario):
    spec = parse_notation("OA_gyro^3/3(0.60)@10w", {"gyro": 3})
    result = fly(short_scenario(time_limit=1.0, attacks=(spec,)))
    assert result.t_atk is None
    assert result.log.column("attack_active").max() == 0
    assert result.outcome_row()["attack"] == "OA_gyro^3/3(0.60)"


def test_coarse_model_flies(short_scenario):
    result = fly(short_scenario(time_limit=1.0, model="coarse"))
    assert result.terminal == "time_limit"


def test_engine_queries(short_scenario):
    engine = FlightEngine(short_scenario(time_limit=0.5), record=False)
    engine.run()
    assert len(engine.position_error()) == engine.ticks
    assert list(engine.alarm_table().columns) == ["unit", "state", "t_alarm", "component"]
    assert engine.source_switches().empty


def test_estimators_corrected_through_step_functions(short_scenario, monkeypatch):
    """Test every tick corrects the front and back ends through their step functions."""
    calls = {"front": 0, "back": 0}

    def counting(name, func):
        def wrapped(*args, **kwargs):
            calls[name] += 1
            return func(*args, **kwargs)
        return wrapped

    monkeypatch.setattr(engine_module, "frontend_step", counting("front", engine_module.frontend_step))
    monkeypatch.setattr(engine_module, "backend_step", counting("back", engine_module.backend_step))
    engine = FlightEngine(short_scenario(time_limit=1.0), record=False)
    engine.run()
    assert calls["front"] == calls["back"] == engine.ticks
    assert engine.ref_state is not None
    assert engine.ref_state.t == pytest.approx((engine.ticks - 1) * engine.dt, abs=engine.dt)
    fused = tuple(unit for unit, _ in engine.front.fused)
    assert engine.ref_state.provenance == fused + tuple(engine.back.corrected_by)


@pytest.mark.slow
class TestAttackedHover:
    @pytest.fixture(scope="class")
    def result(self):
        from src.scenario import ScenarioConfig
        spec = parse_notation("OA_gyro^3/3(0.60)@3w", {"gyro": 3})
        cfg = ScenarioConfig(name="attacked", hover_time=10.0, time_limit=40.0, seed=1, attacks=(spec,))
        return fly(cfg)

    def test_attack_starts_after_waypoint(self, result):
        assert result.t_atk is not None

    def test_compromised_gyros_are_caught(self, result):
        assert result.count("TP") >= 1
        assert result.ttd is not None and not result.ttd.censored
        assert result.ttd.value < 1.0

    def test_recovery_switches_away_from_flagged_imus(self, result):
        assert result.switches
        assert result.log.frame["src_angular_velocity"].iloc[-1] != "imu0"
