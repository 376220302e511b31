import numpy as np
import pandas as pd
import pytest

from src.attacks import AttackSpec, parse_notation
from src.config import EvalConfig
from src.metrics import (
    Censored, ScoreSweep, alarm_bounds, auc, classify_detection, flight_roc_flags, recovery_duration, roc_points,
    summarize_cases, threshold_multipliers, ttd,
)

AVAILABLE = {"gps": 1, "gps_velocity": 1, "gyro": 3, "accel": 3, "baro": 2, "mag": 2}
UNITS = ["gps0", "imu0", "imu1", "imu2", "baro0", "baro1"]


@pytest.fixture
def cfg():
    return EvalConfig()


class TestClassification:
    def test_attack_free_flight(self, cfg):
        classes = classify_detection({"baro1": 40.0}, UNITS, None, None, cfg)
        assert classes["baro1"] == "FP"
        assert all(c == "TN" for u, c in classes.items() if u != "baro1")

    def test_effective_alarm_window(self, cfg):
        spec = parse_notation("OA_gyro^1/3(0.6)", AVAILABLE)
        assert alarm_bounds(spec, cfg) == {"imu0": 1.0}
        classes = classify_detection({"imu0": 10.4}, UNITS, spec, 10.0, cfg)
        assert classes["imu0"] == "TP" and classes["imu1"] == "TN"
        late = classify_detection({"imu0": 11.5}, UNITS, spec, 10.0, cfg)
        assert late["imu0"] == "FN"
        early = classify_detection({"imu0": 9.0}, UNITS, spec, 10.0, cfg)
        assert early["imu0"] == "FN"

    def test_gps_bound(self, cfg):
        spec = parse_notation("OA_gps^1/1(ramp:1.0)", AVAILABLE)
        assert alarm_bounds(spec, cfg) == {"gps0": 20.0}
        assert alarm_bounds(AttackSpec(sensor="baro", deviation=5.0), cfg) == {"baro0": cfg.default_alarm_bound}


class TestTtd:
    def test_earliest_true_positive(self):
        result = ttd({"imu0": 10.3, "imu1": 10.1}, {"imu0": "TP", "imu1": "TP"}, 10.0, 1.0)
        assert result.value == pytest.approx(0.1) and not result.censored

    def test_censored_when_missed(self):
        result = ttd({}, {"imu0": "FN"}, 10.0, 1.0)
        assert result == Censored(1.0, True)
        assert str(result) == ">=1"

    def test_no_attack(self):
        assert ttd({}, {}, None, 1.0) is None


class TestRecoveryDuration:
    t = np.arange(0.0, 10.0, 1.0)

    def test_until_error_exceeds_bound(self, cfg):
        p_true = np.zeros((10, 3))
        p_ctl = np.zeros((10, 3))
        p_ctl[7:, 0] = 5.0
        result = recovery_duration(self.t, p_true, p_ctl, 2.0, cfg)
        assert result == Censored(5.0, False)

    def test_censored_at_flight_end(self, cfg):
        result = recovery_duration(self.t, np.zeros((10, 3)), np.zeros((10, 3)), 2.0, cfg)
        assert result == Censored(7.0, True)

    def test_capped(self):
        cfg = EvalConfig(recovery_cap=3.0)
        assert recovery_duration(self.t, np.zeros((10, 3)), np.zeros((10, 3)), 2.0, cfg) == Censored(3.0, True)

    def test_no_alarm(self, cfg):
        assert recovery_duration(self.t, np.zeros((10, 3)), np.zeros((10, 3)), None, cfg) is None


class TestRoc:
    def test_sweep_records_first_crossing(self):
        sweep = ScoreSweep(["imu0"], np.array([0.5, 1.0, 2.0]))
        sweep.update(1.0, {"imu0": 0.7})
        sweep.update(2.0, {"imu0": 0.6})
        sweep.update(3.0, {"imu0": 1.5})
        assert sweep.crossing["imu0"][:2].tolist() == [1.0, 3.0]
        assert np.isnan(sweep.crossing["imu0"][2])

    def test_flight_flags(self):
        sweep = ScoreSweep(["imu0", "imu1"], np.array([0.5, 1.0, 2.0]))
        sweep.update(5.0, {"imu1": 0.8}, t_atk=10.0)
        sweep.update(10.2, {"imu0": 1.5}, t_atk=10.0)
        flags = flight_roc_flags(sweep, {"imu0": 1.0}, 10.0)
        assert flags["alarmed"].tolist() == [True, True, False]
        assert flags["detected"].tolist() == [True, True, False]

    def test_roc_points_and_auc(self):
        m = np.array([0.5, 1.0, 2.0])
        attacked = [pd.DataFrame({"multiplier": m, "alarmed": [True] * 3, "detected": [True, True, False]})]
        clean = [pd.DataFrame({"multiplier": m, "alarmed": [True, False, False], "detected": [False] * 3})]
        points = roc_points(attacked, clean)
        assert points["tpr"].tolist() == [1.0, 1.0, 0.0]
        assert points["fpr"].tolist() == [1.0, 0.0, 0.0]
        assert auc(points) == pytest.approx(1.0)

    def test_auc_of_chance_line(self):
        points = pd.DataFrame({"fpr": [0.25, 0.5, 0.75], "tpr": [0.25, 0.5, 0.75]})
        assert auc(points) == pytest.approx(0.5)
        assert np.isnan(auc(pd.DataFrame({"fpr": [], "tpr": []})))

    def test_multipliers_are_log_spaced(self):
        m = threshold_multipliers(5)
        assert m[0] == pytest.approx(0.1) and m[-1] == pytest.approx(10.0) and m[2] == pytest.approx(1.0)


def test_summarize_cases():
    outcomes = pd.DataFrame([
        {"case": "a", "status": "ok", "attack": "OA_gyro^1/3(0.60)", "detected": True, "alarmed": True,
         "ttd": 0.2, "recovery_duration": 40.0, "terminal": "mission_complete"},
        {"case": "a", "status": "ok", "attack": "OA_gyro^1/3(0.60)", "detected": False, "alarmed": False,
         "ttd": 1.0, "recovery_duration": None, "terminal": "crash"},
        {"case": "b", "status": "ok", "attack": "none", "detected": False, "alarmed": True,
         "ttd": None, "recovery_duration": None, "terminal": "mission_complete"},
        {"case": "b", "status": "failed", "attack": "none", "detected": False, "alarmed": False,
         "ttd": None, "recovery_duration": None, "terminal": None},
    ])
    summary = summarize_cases(outcomes).set_index("case")
    assert summary.loc["a", "tpr"] == 0.5 and summary.loc["a", "ttd_median"] == pytest.approx(0.2)
    assert summary.loc["a", "crashes"] == 1
    assert summary.loc["b", "fpr"] == 1.0 and summary.loc["b", "failed"] == 1
    assert np.isnan(summary.loc["a", "fpr"])
