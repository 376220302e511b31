"""Sensor suite: GPS, IMUs (gyro + accelerometer), barometers, magnetometers and the battery monitor."""
import math
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from .config import CONTROL_RATE, ConfigError, SensorSuiteConfig
from .physmodel import AirState, BatteryState, RigidState, rotation_matrix, E3

# Which measured states each sensor type emits, and which of them are monitored.
SENSOR_STATES: Dict[str, tuple] = {
    "gps": ("gps_position", "gps_velocity"),
    "imu": ("gyro", "accel"),
    "baro": ("baro", "density"),
    "mag": ("mag",),
    "battery": ("voltage", "current"),
}
MONITORED_STATES: Dict[str, tuple] = {
    "gps": ("gps_position", "gps_velocity"),
    "imu": ("gyro", "accel"),
    "baro": ("baro",),
    "mag": ("mag",),
}
# attack target name -> (sensor type, measured state)
TARGETS: Dict[str, tuple] = {
    "gps": ("gps", "gps_position"),
    "gps_velocity": ("gps", "gps_velocity"),
    "gyro": ("imu", "gyro"),
    "accel": ("imu", "accel"),
    "baro": ("baro", "baro"),
    "mag": ("mag", "mag"),
}


@dataclass(frozen=True)
class SensorConfig:
    kind: str
    unit: str
    index: int
    rate: float
    noise: Dict[str, float] = field(default_factory=dict)

    def every(self, control_rate: float = CONTROL_RATE) -> int:
        ticks = control_rate / self.rate
        if ticks < 1 or abs(ticks - round(ticks)) > 1e-9:
            raise ConfigError(f"{self.unit}: rate {self.rate} Hz must divide the control rate {control_rate} Hz")
        return int(round(ticks))


@dataclass
class Measurement:
    unit: str
    kind: str
    t: float
    values: Dict[str, np.ndarray]


def sensor_units(cfg: SensorSuiteConfig) -> List[SensorConfig]:
    units = []
    for i in range(cfg.gps_count):
        units.append(SensorConfig("gps", f"gps{i}", i, cfg.gps_rate,
                                  {"gps_position": cfg.gps_position_noise, "gps_velocity": cfg.gps_velocity_noise}))
    for i in range(cfg.imu_count):
        units.append(SensorConfig("imu", f"imu{i}", i, cfg.imu_rate,
                                  {"gyro": cfg.gyro_noise, "accel": cfg.accel_noise}))
    for i in range(cfg.baro_count):
        units.append(SensorConfig("baro", f"baro{i}", i, cfg.baro_rate,
                                  {"baro": cfg.baro_noise, "density": cfg.density_noise}))
    for i in range(cfg.mag_count):
        units.append(SensorConfig("mag", f"mag{i}", i, cfg.mag_rate, {"mag": cfg.mag_noise}))
    units.append(SensorConfig("battery", "battery0", 0, cfg.battery_rate,
                              {"voltage": cfg.voltage_noise, "current": cfg.current_noise}))
    return units


def earth_field(inclination_deg: float) -> np.ndarray:
    """Unit Earth magnetic field in NED, pointing north and dipping down."""
    inc = math.radians(inclination_deg)
    return np.array([math.cos(inc), 0.0, math.sin(inc)])


def project(kind: str, truth: RigidState, air: AirState, battery: BatteryState,
            field_ned: np.ndarray, gravity: float) -> Dict[str, np.ndarray]:
    """Exact, noise-free reading of a sensor type."""
    if kind == "gps":
        return {"gps_position": truth.p.copy(), "gps_velocity": truth.v.copy()}
    if kind == "imu":
        r = rotation_matrix(truth.q)
        return {"gyro": truth.w.copy(), "accel": r.T @ (truth.a - gravity * E3)}
    if kind == "baro":
        return {"baro": np.array([-truth.p[2]]), "density": np.array([air.density])}
    if kind == "mag":
        return {"mag": rotation_matrix(truth.q).T @ field_ned}
    if kind == "battery":
        return {"voltage": np.array([battery.voltage]), "current": np.array([battery.current])}
    raise ValueError(f"Unknown sensor type: {kind}")


def sample_sensors(truth: RigidState, air: AirState, battery: BatteryState,
                   configs: List[SensorConfig], t: float, rng: np.random.Generator,
                   field_ned: np.ndarray, gravity: float = 9.81) -> List[Measurement]:
    """Noisy readings from every configured instance at time t."""
    out = []
    cache: Dict[str, Dict[str, np.ndarray]] = {}
    for cfg in configs:
        if cfg.kind not in cache:
            cache[cfg.kind] = project(cfg.kind, truth, air, battery, field_ned, gravity)
        values = {}
        for state, exact in cache[cfg.kind].items():
            std = cfg.noise.get(state, 0.0)
            values[state] = exact + rng.normal(0.0, 1.0, exact.shape) * std if std > 0 else exact.copy()
        out.append(Measurement(cfg.unit, cfg.kind, t, values))
    return out


class SensorSuite:
    """Samples each instance on its own grid of control ticks."""

    def __init__(self, cfg: SensorSuiteConfig, rng: np.random.Generator,
                 gravity: float = 9.81, control_rate: float = CONTROL_RATE):
        self.cfg = cfg
        self.units = sensor_units(cfg)
        self.every = {u.unit: u.every(control_rate) for u in self.units}
        self.rng = rng
        self.gravity = gravity
        self.field_ned = earth_field(cfg.mag_inclination_deg)

    def unit_kinds(self) -> Dict[str, str]:
        return {u.unit: u.kind for u in self.units}

    def rate(self, unit: str) -> float:
        return next(u.rate for u in self.units if u.unit == unit)

    def sample(self, truth: RigidState, air: AirState, battery: BatteryState, tick: int, t: float) -> List[Measurement]:
        due = [u for u in self.units if tick % self.every[u.unit] == 0]
        return sample_sensors(truth, air, battery, due, t, self.rng, self.field_ned, self.gravity)
