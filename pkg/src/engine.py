"""Closed-loop flight: plant, sensors, attacks, detectors, recovery, estimators and controller, tick by tick."""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from .attacks import AttackInjector
from .config import CONTROL_RATE
from .controller import ControllerState, controller_step
from .detect import DetectorBank
from .estimator import (
    BackEnd, FrontEnd, ReferenceState, VanillaEstimator, apply_corrections, backend_step, frontend_step,
)
from .flightlog import FlightLog, FlightRecorder
from .metrics import (
    Censored, ScoreSweep, alarm_bounds, classify_detection, flight_roc_flags, recovery_duration,
    threshold_multipliers, ttd,
)
from .missions import MissionTracker, mission_waypoints
from .physmodel import BatteryState, ModelPredictor, RigidState, specific_force
from .recovery import SE, RecoveryMonitor
from .scenario import ScenarioConfig
from .sensors import Measurement, SensorSuite
from .simworld import QuadPlant, WindModel, air_density, step_wind

logger = logging.getLogger(__name__)

EXIT_CODES = {"mission_complete": 0, "time_limit": 0, "crash": 3, "divergence": 4}
AXES = ("x", "y", "z")
NED = ("n", "e", "d")
QUAT = ("w", "x", "y", "z")


def rng_streams(seed: int) -> Dict[str, np.random.Generator]:
    """Independent generators per noise source, so adding an attack never shifts the wind or sensor noise."""
    names = ("wind", "sensors", "mission", "attack")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {name: np.random.default_rng(child) for name, child in zip(names, children)}


@dataclass
class FlightResult:
    scenario: ScenarioConfig
    terminal: str
    t_end: float
    t_atk: Optional[float]
    alarms: Dict[str, float]
    classes: Dict[str, str]
    ttd: Optional[Censored]
    recovery: Optional[Censored]
    roc: pd.DataFrame
    switches: List[Tuple[float, str, str]] = field(default_factory=list)
    log: Optional[FlightLog] = None

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.terminal]

    @property
    def first_alarm(self) -> Optional[float]:
        return min(self.alarms.values()) if self.alarms else None

    def count(self, cls: str) -> int:
        return sum(1 for c in self.classes.values() if c == cls)

    def outcome_row(self) -> Dict[str, Any]:
        spec = self.scenario.attack()
        return {
            "case": self.scenario.name,
            "mission": self.scenario.mission,
            "attack": spec.notation(self.scenario.available()) if spec is not None else "none",
            "seed": self.scenario.seed,
            "status": "ok",
            "terminal": self.terminal,
            "t_end": self.t_end,
            "t_atk": self.t_atk,
            "t_alarm": self.first_alarm,
            "alarmed": bool(self.alarms),
            "detected": self.count("TP") > 0,
            "tp": self.count("TP"),
            "fp": self.count("FP"),
            "tn": self.count("TN"),
            "fn": self.count("FN"),
            "ttd": None if self.ttd is None or self.ttd.censored else self.ttd.value,
            "ttd_censored": None if self.ttd is None else self.ttd.censored,
            "recovery_duration": None if self.recovery is None else self.recovery.value,
            "recovery_censored": None if self.recovery is None else self.recovery.censored,
            "switches": len(self.switches),
            "error": "",
        }


class FlightEngine:
    """Owns every component of one flight; `run` advances the loop until a terminal condition."""

    def __init__(self, cfg: ScenarioConfig, record: bool = True):
        self.cfg = cfg
        self.record = record
        self.dt = 1.0 / CONTROL_RATE
        self.rngs = rng_streams(cfg.seed)
        self.mission = mission_waypoints(cfg.mission, cfg.hover_time, cfg.maneuver_laps, self.rngs["mission"])
        self.time_limit = cfg.time_limit or self.mission.expected_duration()

        vehicle = cfg.vehicle
        self.plant = QuadPlant(vehicle, cfg.battery)
        self.wind = WindModel(cfg.wind, self.rngs["wind"], CONTROL_RATE)
        self.sensors = SensorSuite(cfg.sensors, self.rngs["sensors"], vehicle.gravity, CONTROL_RATE)
        self.unit_kinds = {u: k for u, k in self.sensors.unit_kinds().items() if k != "battery"}

        model_params = cfg.model_params()
        self.model = ModelPredictor(model_params, self.dt)
        self.bank = DetectorBank(self.unit_kinds, cfg.detector_table(), cfg.detector, cfg.alarm_delay)
        self.injector = AttackInjector(cfg.attack(), self.bank)
        self.recovery = RecoveryMonitor(self.unit_kinds, cfg.recovery)

        imus = [u for u, k in self.unit_kinds.items() if k == "imu"]
        self.front = FrontEnd(model_params, cfg.estimator, imus, self.dt, cfg.sensors.imu_rate)
        field_ned = self.sensors.field_ned
        self.back = BackEnd(cfg.estimator, field_ned, self.dt, vehicle.gravity)
        self.vanilla = VanillaEstimator(cfg.estimator, field_ned, self.dt, vehicle.gravity)
        self.ctl = ControllerState(cfg.controller)
        self.tracker = MissionTracker(self.mission, cfg.controller.acceptance_radius)
        self.pseudo_every = {
            "gps": round(CONTROL_RATE / cfg.sensors.gps_rate),
            "baro": round(CONTROL_RATE / cfg.sensors.baro_rate),
            "mag": round(CONTROL_RATE / cfg.sensors.mag_rate),
        }

        self.command = np.full(4, vehicle.pwm_min)
        self.battery_reading = BatteryState(vehicle.voltage_ref, 0.0)
        self.alarms: Dict[str, float] = {}
        self.sweep = ScoreSweep(sorted(self.unit_kinds), threshold_multipliers(cfg.eval.roc_points))
        self.recorder = FlightRecorder()
        n = int(self.time_limit / self.dt) + 2
        self._t = np.zeros(n)
        self._p_true = np.zeros((n, 3))
        self._p_ctl = np.zeros((n, 3))
        self.ticks = 0
        self.terminal: Optional[str] = None
        self.reference: Dict[str, np.ndarray] = {}
        self.ref_state: Optional[ReferenceState] = None

    # ------------------------------------------------------------ one tick

    def _predict(self) -> Tuple[np.ndarray, np.ndarray]:
        a_ctrl, tau = self.model.step(self.command, self.battery_reading)
        w_minus, w_cs = self.front.predict(tau)
        back = self.back.state
        density = air_density(-back.p[2])
        a_drag = self.model.drag(back.q, back.v, np.zeros(3), density)
        self.back.predict(a_ctrl, a_drag, w_minus)
        s = self.back.state
        self.reference = {
            "gyro": w_minus,
            "gyro_cs": w_cs,
            "accel": specific_force(a_ctrl, a_drag),
            "gps_position": s.p,
            "gps_velocity": s.v,
            "baro": np.array([-s.p[2]]),
            "mag": self.back.predicted_field(),
        }
        return a_ctrl, a_drag

    def _selected(self, kind: str, by_unit: Dict[str, Measurement]) -> Tuple[str, Optional[Measurement]]:
        src = self.recovery.source(kind)
        return src.unit, by_unit.get(src.unit)

    def _correct_back(self, by_unit: Dict[str, Measurement], t: float):
        gps_unit, gps = self._selected("position", by_unit)
        vel_unit, vel = self._selected("velocity", by_unit)
        alt_unit, alt = self._selected("altitude", by_unit)
        mag_unit, mag = self._selected("attitude", by_unit)
        gps_values = {}
        if gps is not None:
            gps_values["gps_position"] = gps.values["gps_position"]
        if vel is not None:
            gps_values["gps_velocity"] = vel.values["gps_velocity"]
        altitude = None
        if alt is not None:
            value = alt.values["baro"][0] if alt.kind == "baro" else -alt.values["gps_position"][2]
            altitude = (alt_unit, float(value))
        self.ref_state = backend_step(self.back, None, None, None, t, (gps_unit, gps_values) if gps_values else None,
                                      altitude, (mag_unit, mag.values["mag"]) if mag is not None else None,
                                      front=self.front)

    def _step_vanilla(self, tick: int, by_unit: Dict[str, Measurement]):
        ref = self.back.state
        w_unit, w_meas = self._selected("angular_velocity", by_unit)
        a_unit, a_meas = self._selected("acceleration", by_unit)
        gyro = self.front.w if w_unit == SE else (w_meas.values["gyro"] if w_meas is not None else None)
        accel = self.reference["accel"] if a_unit == SE else (a_meas.values["accel"] if a_meas is not None else None)
        self.vanilla.step(gyro, accel)

        gps_values = {}
        p_unit, p_meas = self._selected("position", by_unit)
        v_unit, v_meas = self._selected("velocity", by_unit)
        on_gps_grid = tick % self.pseudo_every["gps"] == 0
        if p_unit == SE and on_gps_grid:
            gps_values["gps_position"] = ref.p
        elif p_meas is not None:
            gps_values["gps_position"] = p_meas.values["gps_position"]
        if v_unit == SE and on_gps_grid:
            gps_values["gps_velocity"] = ref.v
        elif v_meas is not None:
            gps_values["gps_velocity"] = v_meas.values["gps_velocity"]

        altitude = None
        alt_unit, alt_meas = self._selected("altitude", by_unit)
        if alt_unit == SE and tick % self.pseudo_every["baro"] == 0:
            altitude = (SE, -ref.p[2])
        elif alt_meas is not None:
            value = alt_meas.values["baro"][0] if alt_meas.kind == "baro" else -alt_meas.values["gps_position"][2]
            altitude = (alt_unit, float(value))

        mag = None
        m_unit, m_meas = self._selected("attitude", by_unit)
        if m_unit == SE and tick % self.pseudo_every["mag"] == 0:
            mag = (SE, self.back.predicted_field())
        elif m_meas is not None:
            mag = (m_unit, m_meas.values["mag"])
        apply_corrections(self.vanilla, (p_unit, gps_values) if gps_values else None, altitude, mag)

    def control_estimate(self) -> RigidState:
        return self.back.state if self.recovery.controller_source() == SE else self.vanilla.state

    def step(self, tick: int) -> Optional[str]:
        t = tick * self.dt
        truth = self.plant.state
        measurements = self.sensors.sample(truth, self.plant.air, self.plant.battery.state, tick, t)
        for m in measurements:
            if m.kind == "battery":
                self.battery_reading = BatteryState(float(m.values["voltage"][0]), float(m.values["current"][0]))
        self._predict()

        if self.injector.t_atk is None or any(s is None for s in self.injector.start.values()):
            self.injector.resolve_waypoint(self.tracker.attack_waypoint_time())
        attack_active = self.injector.inject(measurements, t, self.reference)

        if self.tracker.passed_takeoff():
            self.bank.arm(t)
        reports = self.bank.process(measurements, self.reference, t)
        for rep in reports:
            self.alarms.setdefault(rep.unit, rep.t_alarm)
        self.recovery.process(reports, t)

        flagged = self.recovery.flagged
        by_unit = {m.unit: m for m in measurements if m.unit not in flagged}
        gyro = {u: m.values["gyro"] for u, m in by_unit.items() if m.kind == "imu"}
        frontend_step(self.front, None, gyro, flagged, t)
        self._correct_back(by_unit, t)
        self._step_vanilla(tick, by_unit)

        est = self.control_estimate()
        target = self.tracker.update(t, est.p)
        self.command = controller_step(est, target, self.ctl, self.dt, self.cfg.vehicle, self.battery_reading,
                                       self.tracker.target_yaw, self.mission.max_speed)

        scores = {}
        for (unit, _), det in self.bank.detectors.items():
            scores[unit] = max(scores.get(unit, 0.0), det.last_score)
        self.sweep.update(t, scores, self.injector.t_atk)
        self._t[tick] = t
        self._p_true[tick] = truth.p
        self._p_ctl[tick] = est.p
        if self.record:
            self._record(t, truth, est, measurements, scores, attack_active)

        self.plant.step(self.command, step_wind(self.wind), self.dt)
        if self.plant.crashed():
            return "crash"
        if np.linalg.norm(truth.p - est.p) > self.cfg.eval.divergence_limit:
            return "divergence"
        if self.tracker.complete:
            return "mission_complete"
        if t + self.dt > self.time_limit:
            return "time_limit"
        return None

    def _record(self, t: float, truth: RigidState, est: RigidState, measurements: List[Measurement],
                scores: Dict[str, float], attack_active: bool):
        row: Dict[str, Any] = {"t": t}
        for prefix, s in (("true", truth), ("ref", self.back.state), ("est", self.vanilla.state)):
            row.update({f"{prefix}_p{a}": float(s.p[i]) for i, a in enumerate(NED)})
            row.update({f"{prefix}_v{a}": float(s.v[i]) for i, a in enumerate(NED)})
            row.update({f"{prefix}_q{a}": float(s.q[i]) for i, a in enumerate(QUAT)})
            row.update({f"{prefix}_w{a}": float(s.w[i]) for i, a in enumerate(AXES)})
        row.update({f"true_a{a}": float(truth.a[i]) for i, a in enumerate(NED)})
        row.update({f"ctl_p{a}": float(est.p[i]) for i, a in enumerate(NED)})
        row.update({f"cmd_{i + 1}": float(c) for i, c in enumerate(self.command)})
        row["bat_v"] = self.battery_reading.voltage
        row["bat_i"] = self.battery_reading.current
        row.update({f"wind_{a}": float(w) for a, w in zip(NED, self.plant.air.wind)})
        row["rho"] = self.plant.air.density
        if self.cfg.log_residuals:
            for m in measurements:
                for state, value in m.values.items():
                    for i, v in enumerate(np.atleast_1d(value)):
                        row[f"meas_{m.unit}_{state}_{i}"] = float(v)
            for (unit, state), (main, cs) in self.bank.last_residuals.items():
                for i, v in enumerate(main):
                    row[f"res_{unit}_{state}_{i}"] = float(v)
                if state == "gyro":
                    for i, v in enumerate(cs):
                        row[f"rescs_{unit}_{state}_{i}"] = float(v)
            for (unit, state), det in self.bank.detectors.items():
                row[f"score_{unit}_{state}"] = det.last_score
        for unit in sorted(self.unit_kinds):
            row[f"alarm_{unit}"] = 1 if unit in self.alarms else 0
        for kind, src in self.recovery.selected.items():
            row[f"src_{kind}"] = src.unit
        row["ctl_source"] = self.recovery.controller_source()
        row["attack_active"] = int(attack_active)
        row["fused"] = "+".join(self.back.reference(t, self.front).provenance)
        self.recorder.add(row)

    # ------------------------------------------------------------ whole flight

    def run(self) -> FlightResult:
        cfg = self.cfg
        spec = cfg.attack()
        logger.info("flight %s seed %d: %s, attack %s", cfg.name, cfg.seed, cfg.mission,
                    spec.notation(cfg.available()) if spec is not None else "none")
        tick = 0
        terminal = None
        while terminal is None:
            terminal = self.step(tick)
            tick += 1
        self.ticks = tick
        self.terminal = terminal
        t_end = (tick - 1) * self.dt
        logger.info("flight %s seed %d ended at %.2f s: %s", cfg.name, cfg.seed, t_end, terminal)
        return self._result(t_end)

    def _result(self, t_end: float) -> FlightResult:
        cfg = self.cfg
        spec = cfg.attack()
        t_atk = self.injector.t_atk
        if t_atk is not None and t_atk > t_end:
            t_atk = None
        classes = classify_detection(self.alarms, sorted(self.unit_kinds), spec if t_atk is not None else None,
                                     t_atk, cfg.eval)
        bounds = alarm_bounds(spec, cfg.eval) if t_atk is not None else {}
        bound = min(bounds.values()) if bounds else cfg.eval.default_alarm_bound
        n = self.ticks
        first = min(self.alarms.values()) if self.alarms else None
        log = None
        if self.record:
            meta = {
                "scenario": cfg.name, "mission": cfg.mission, "seed": cfg.seed, "detector": cfg.detector,
                "model": cfg.model, "recovery": cfg.recovery.enabled, "buffer": cfg.estimator.buffer,
                "attack": spec.notation(cfg.available()) if spec is not None else "none",
                "t_atk": t_atk, "terminal": self.terminal, "alarms": self.alarms,
                "armed_at": self.bank.armed_at,
            }
            log = FlightLog(self.recorder.to_frame(), meta)
        return FlightResult(
            scenario=cfg,
            terminal=self.terminal,
            t_end=t_end,
            t_atk=t_atk,
            alarms=dict(self.alarms),
            classes=classes,
            ttd=ttd(self.alarms, classes, t_atk, bound),
            recovery=recovery_duration(self._t[:n], self._p_true[:n], self._p_ctl[:n], first, cfg.eval),
            roc=flight_roc_flags(self.sweep, bounds, t_atk),
            switches=list(self.recovery.switches),
            log=log,
        )

    # ------------------------------------------------------------ queries

    def position_error(self) -> np.ndarray:
        n = self.ticks
        return np.linalg.norm(self._p_true[:n] - self._p_ctl[:n], axis=1)

    def alarm_table(self) -> pd.DataFrame:
        rows = [{"unit": r.unit, "state": r.state, "t_alarm": r.t_alarm, "component": r.component}
                for r in self.bank.reports]
        return pd.DataFrame(rows, columns=["unit", "state", "t_alarm", "component"])

    def source_switches(self) -> pd.DataFrame:
        return pd.DataFrame(self.recovery.switches, columns=["t", "kind", "source"])


def fly(cfg: ScenarioConfig, record: bool = True) -> FlightResult:
    return FlightEngine(cfg, record=record).run()
