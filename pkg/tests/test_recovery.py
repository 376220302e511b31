import pytest

from src.config import RecoveryConfig
from src.detect import DetectionReport
from src.recovery import (
    SE, LatticeStatus, RecoveryMonitor, SensorHealth, SourcePriority, isolate, lattice_step, select_source,
)

UNITS = {"gps0": "gps", "imu0": "imu", "imu1": "imu", "imu2": "imu", "baro0": "baro", "baro1": "baro",
         "mag0": "mag", "mag1": "mag", "battery0": "battery"}


def alarm(unit, t=1.0):
    return DetectionReport(unit, "x", True, t, "cusum")


@pytest.fixture
def health():
    return SensorHealth.from_units(UNITS)


@pytest.fixture
def priority():
    return SourcePriority()


class TestHealth:
    def test_validated_lowest_id_first(self, health):
        assert health.validated("imu") == ["imu0", "imu1", "imu2"]

    def test_isolate_flags_once(self, health):
        flagged = isolate(health, alarm("imu1", 2.0))
        assert flagged.validated("imu") == ["imu0", "imu2"]
        assert isolate(flagged, alarm("imu1", 3.0)).flag_time("imu1") == 2.0
        assert health.flagged == frozenset()

    def test_non_alarm_is_ignored(self, health):
        assert isolate(health, DetectionReport("imu0", "gyro", False)) is health

    def test_unknown_instance(self, health):
        with pytest.raises(KeyError):
            isolate(health, alarm("imu7"))


class TestSelectSource:
    def test_highest_priority_type_wins(self, health, priority):
        assert select_source("angular_velocity", health, priority).unit == "imu0"
        assert select_source("altitude", health, priority).unit == "baro0"

    def test_falls_through_priority_order(self, health, priority):
        for unit in ("baro0", "baro1"):
            health = isolate(health, alarm(unit))
        assert select_source("altitude", health, priority).unit == "gps0"
        health = isolate(health, alarm("gps0"))
        choice = select_source("altitude", health, priority)
        assert choice.is_se and choice.unit == SE

    def test_unknown_state_kind(self, health, priority):
        with pytest.raises(KeyError):
            select_source("airspeed", health, priority)

    def test_priorities_must_start_with_se(self):
        with pytest.raises(ValueError):
            RecoveryConfig(priorities={"altitude": ["gps", "se"]})


class TestLattice:
    def test_top_label(self, health, priority):
        assert LatticeStatus.top("altitude", health, priority).label() == "({baro0,baro1},{gps0},{SE})"

    def test_descends_monotonically(self, health, priority):
        top = LatticeStatus.top("angular_velocity", health, priority)
        status = top
        for unit in ("imu2", "imu0", "imu1"):
            health = isolate(health, alarm(unit))
            nxt = lattice_step(status, "angular_velocity", health, priority)
            assert nxt <= status and not status <= nxt
            status = nxt
        assert status.label() == "(⊥,{SE})"

    def test_meet_rejects_other_kinds(self, health, priority):
        with pytest.raises(ValueError):
            LatticeStatus.top("altitude", health, priority).meet(LatticeStatus.top("position", health, priority))


class TestRecoveryMonitor:
    def test_switches_on_alarm(self):
        monitor = RecoveryMonitor(UNITS)
        assert monitor.process([alarm("imu0", 12.0)], 12.0)
        assert monitor.source("angular_velocity").unit == "imu1"
        assert (12.0, "angular_velocity", "imu1") in monitor.switches
        assert monitor.controller_source() == "vanilla"

    def test_controller_leaves_vanilla_without_imus(self):
        monitor = RecoveryMonitor(UNITS)
        monitor.process([alarm("imu0"), alarm("imu1"), alarm("imu2")], 1.0)
        assert monitor.controller_source() == SE
        assert monitor.source("acceleration").is_se

    def test_unrelated_alarm_keeps_selection(self):
        monitor = RecoveryMonitor(UNITS)
        assert not monitor.process([alarm("mag1")], 1.0)
        assert monitor.flagged == frozenset({"mag1"})

    def test_disabled(self):
        monitor = RecoveryMonitor(UNITS, RecoveryConfig(enabled=False))
        assert not monitor.process([alarm("imu0")], 1.0)
        assert monitor.source("angular_velocity").unit == "imu0"
