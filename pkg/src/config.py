"""Shipped parameter tables and typed settings for the flight testbed.

Constant tables mirror the published vehicle and detector parameters; the
pydantic models validate anything read from INI files before a flight uses it.
"""
import configparser
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Type, TypeVar

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

logger = logging.getLogger(__name__)

M = TypeVar("M", bound=BaseModel)

GRAVITY = 9.81
CONTROL_RATE = 250.0

# Vehicle parameters, keyed exactly like the vehicle INI files.
# The simulation column publishes no battery constants; the values below are declared stand-ins.
SIM_QUAD: Dict[str, float] = {
    "mass": 0.80,
    "arm_length": 0.165,
    "inertia_xx": 5.0e-3,
    "inertia_yy": 5.0e-3,
    "inertia_zz": 9.0e-3,
    "thrust_coeff": 4.0,
    "torque_coeff": 0.05,
    "rotor_gyro_coeff": 0.0,
    "time_constant": 0.005,
    "pwm_min": 1000.0,
    "pwm_range": 1000.0,
    "voltage_ref": 16.8,
    "resistance_internal": 0.05,
    "momentum_drag": 0.001,
    "ballistic_x": 0.022,
    "ballistic_y": 0.022,
}

REALWORLD_QUAD: Dict[str, float] = {
    "mass": 2.64,
    "arm_length": 0.288,
    "inertia_xx": 5.17e-2,
    "inertia_yy": 5.50e-2,
    "inertia_zz": 7.62e-2,
    "thrust_coeff": 23.0,
    "torque_coeff": 0.44,
    "rotor_gyro_coeff": 0.061,
    "time_constant": 0.035,
    "pwm_min": 840.0,
    "pwm_range": 1000.0,
    "voltage_ref": 24.3,
    "resistance_internal": 0.072,
    "momentum_drag": 0.031,
    "ballistic_x": 0.161,
    "ballistic_y": 0.145,
}

SIM_BATTERY = {"capacity": 5.0, "voltage_empty": 14.0, "current_per_thrust": 12.0}
REALWORLD_BATTERY = {"capacity": 10.0, "voltage_empty": 21.0, "current_per_thrust": 30.0}

DETECTOR_STATES = ("gps_position", "gps_velocity", "baro", "mag", "gyro", "accel")
DETECTOR_ALGORITHMS = ("cusum", "ema", "cs-ema", "l1tw", "l2tw")

# Std used to normalize residuals before they reach a detector.
# Separate from the simulated sensor noise in SensorSuiteConfig.
NOISE_PARAMS: Dict[str, float] = {
    "gps_position": 1.5,
    "gps_velocity": 0.3,
    "baro": 1.0,
    "mag": 0.06,
    "gyro": 0.12,
    "accel": 0.35,
}

# Detector table, normalized units.
DETECTOR_TABLE: Dict[str, Dict[str, float]] = {
    "gps_position": {
        "l1tw_threshold": 1.15, "l1tw_window": 10, "l2tw_threshold": 1.402, "l2tw_window": 10,
        "cusum_threshold": 3.0, "cusum_shift": 0.50,
        "csema_threshold": 3.0, "csema_shift": 0.50, "csema_ema_threshold": 0.45,
        "csema_smoothing": 0.01, "csema_cap": 0.85,
    },
    "gps_velocity": {
        "l1tw_threshold": 3.10, "l1tw_window": 10, "l2tw_threshold": 4.42, "l2tw_window": 10,
        "cusum_threshold": 3.5, "cusum_shift": 1.00,
        "csema_threshold": 3.5, "csema_shift": 1.00, "csema_ema_threshold": 0.50,
        "csema_smoothing": 0.01, "csema_cap": 1.10,
    },
    "baro": {
        "l1tw_threshold": 0.10, "l1tw_window": 10, "l2tw_threshold": 0.02, "l2tw_window": 10,
        "cusum_threshold": 3.0, "cusum_shift": 0.25,
        "csema_threshold": 3.0, "csema_shift": 0.25, "csema_ema_threshold": 0.15,
        "csema_smoothing": 0.05, "csema_cap": 0.52,
    },
    "mag": {
        "l1tw_threshold": 0.35, "l1tw_window": 10, "l2tw_threshold": 0.2, "l2tw_window": 10,
        "cusum_threshold": 3.0, "cusum_shift": 0.25,
        "csema_threshold": 3.0, "csema_shift": 0.25, "csema_ema_threshold": 0.30,
        "csema_smoothing": 0.01, "csema_cap": 0.52,
    },
    "gyro": {
        "l1tw_threshold": 0.464, "l1tw_window": 10, "l2tw_threshold": 0.65, "l2tw_window": 20,
        "cusum_threshold": 3.0, "cusum_shift": 0.50,
        "csema_threshold": 3.0, "csema_shift": 0.50, "csema_ema_threshold": 0.25,
        "csema_smoothing": 0.01, "csema_cap": 0.85,
    },
    "accel": {
        "l1tw_threshold": 5.20, "l1tw_window": 10, "l2tw_threshold": 30.25, "l2tw_window": 10,
        "cusum_threshold": 3.0, "cusum_shift": 1.00,
        "csema_threshold": 3.0, "csema_shift": 1.00, "csema_ema_threshold": 0.95,
        "csema_smoothing": 0.01, "csema_cap": 1.10,
    },
}

# Aggressive maneuvers widen the gyro EMA band.
MANEUVER_OVERRIDES: Dict[str, Dict[str, float]] = {"gyro": {"csema_ema_threshold": 0.32}}

# Gyro CS-EMA setting selected on the real airframe (fixture only).
REALWORLD_GYRO_CSEMA = {
    "csema_threshold": 3.0, "csema_shift": 0.75, "csema_ema_threshold": 0.22,
    "csema_cap": 0.52, "csema_smoothing": 0.075,
}

# Candidate grids for detector tuning.
CUSUM_SHIFT_GRID = (0.25, 0.3, 0.4, 0.5, 0.75)
EMA_SMOOTHING_GRID = (0.01, 0.02, 0.05, 0.075)
EMA_CAP_GRID = (0.52, 0.85, 1.10)
TTD_TRIAL_DEVIATIONS = (1.0, 2.0, 3.0, 5.0)

# Plausible search ranges for the fitted vehicle parameters.
FIT_RANGES: Dict[str, Tuple[float, float]] = {
    "momentum_drag": (0.0, 0.1),
    "ballistic_x": (0.0, 0.5),
    "ballistic_y": (0.0, 0.5),
    "time_constant": (1.0e-4, 0.1),
    "rotor_gyro_coeff": (0.0, 0.2),
}

DEFAULT_PRIORITIES: Dict[str, List[str]] = {
    "altitude": ["se", "gps", "baro"],
    "angular_velocity": ["se", "imu"],
    "acceleration": ["se", "imu"],
    "position": ["se", "gps"],
    "velocity": ["se", "gps"],
    "attitude": ["se", "mag"],
}

# Alternate column spellings accepted when reading flight logs written by other tools.
LOG_COLUMN_SYNONYMS: Dict[str, List[str]] = {
    "t": ["t", "time", "timestamp", "time_s"],
    "bat_v": ["bat_v", "battery_voltage", "voltage", "v_load"],
    "bat_i": ["bat_i", "battery_current", "current", "i_load"],
    "cmd_1": ["cmd_1", "pwm_1", "actuator_1"],
    "cmd_2": ["cmd_2", "pwm_2", "actuator_2"],
    "cmd_3": ["cmd_3", "pwm_3", "actuator_3"],
    "cmd_4": ["cmd_4", "pwm_4", "actuator_4"],
}


class ConfigError(ValueError):
    """Invalid configuration, optionally located in a file."""

    def __init__(self, message: str, path: Optional[str] = None, lineno: Optional[int] = None):
        self.message = message
        self.path = path
        self.lineno = lineno
        where = ""
        if path is not None:
            where = f"{path}:{lineno}: " if lineno is not None else f"{path}: "
        super().__init__(where + message)


class PhysicalParams(BaseModel):
    """Vehicle parameter set of the nonlinear model."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    mass: float = Field(gt=0)
    arm_length: float = Field(gt=0)
    inertia_xx: float = Field(gt=0)
    inertia_yy: float = Field(gt=0)
    inertia_zz: float = Field(gt=0)
    inertia_xy: float = 0.0
    inertia_xz: float = 0.0
    inertia_yz: float = 0.0
    thrust_coeff: float = Field(gt=0)
    torque_coeff: float = Field(ge=0)
    rotor_gyro_coeff: float = 0.0
    time_constant: float = Field(gt=0)
    pwm_min: float
    pwm_range: float = Field(gt=0)
    voltage_ref: float = Field(gt=0)
    resistance_internal: float = Field(ge=0)
    momentum_drag: float = Field(ge=0)
    ballistic_x: float = Field(ge=0)
    ballistic_y: float = Field(ge=0)
    gravity: float = Field(default=GRAVITY, gt=0)
    # fidelity flags
    battery_adjust: bool = True
    rotor_delay: bool = True
    rotor_gyro: bool = True
    drag: bool = True

    @model_validator(mode="after")
    def _check_inertia(self):
        if np.any(np.linalg.eigvalsh(self.inertia) <= 0):
            raise ValueError("inertia matrix must be positive definite")
        return self

    @property
    def inertia(self) -> np.ndarray:
        return np.array([
            [self.inertia_xx, self.inertia_xy, self.inertia_xz],
            [self.inertia_xy, self.inertia_yy, self.inertia_yz],
            [self.inertia_xz, self.inertia_yz, self.inertia_zz],
        ])

    @property
    def ballistic(self) -> np.ndarray:
        return np.array([self.ballistic_x, self.ballistic_y, 0.0])

    def coarse(self) -> "PhysicalParams":
        """Copy with battery adjustment, rotor lag, rotor gyro and drag switched off."""
        return self.model_copy(update={
            "battery_adjust": False, "rotor_delay": False, "rotor_gyro": False, "drag": False,
        })


class BatteryConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    capacity: float = Field(default=5.0, gt=0)  # Ah
    voltage_empty: float = Field(default=14.0, gt=0)
    current_per_thrust: float = Field(default=12.0, ge=0)  # A per unit of summed relative thrust


class SensorSuiteConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    gps_count: int = Field(default=1, ge=0)
    imu_count: int = Field(default=3, ge=0)
    baro_count: int = Field(default=2, ge=0)
    mag_count: int = Field(default=2, ge=0)
    gps_rate: float = Field(default=10.0, gt=0)
    imu_rate: float = Field(default=250.0, gt=0)
    baro_rate: float = Field(default=50.0, gt=0)
    mag_rate: float = Field(default=50.0, gt=0)
    battery_rate: float = Field(default=50.0, gt=0)
    gyro_noise: float = Field(default=0.01, ge=0)
    accel_noise: float = Field(default=0.05, ge=0)
    gps_position_noise: float = Field(default=0.5, ge=0)
    gps_velocity_noise: float = Field(default=0.1, ge=0)
    baro_noise: float = Field(default=0.2, ge=0)
    mag_noise: float = Field(default=0.01, ge=0)
    density_noise: float = Field(default=0.0, ge=0)
    voltage_noise: float = Field(default=0.0, ge=0)
    current_noise: float = Field(default=0.0, ge=0)
    mag_inclination_deg: float = 60.0

    def noiseless(self) -> "SensorSuiteConfig":
        return self.model_copy(update={
            k: 0.0 for k in type(self).model_fields if k.endswith("_noise")
        })


class WindConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    mean: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    sigma: Tuple[float, float, float] = (6.0, 8.0, 0.0)
    scale: float = Field(default=400.0, gt=0)
    reversion: float = Field(default=2.0, ge=0)  # s, 0 disables mean reversion


class DetectorParams(BaseModel):
    """Parameters of one detector, thresholds in normalized units."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    algorithm: str = "cs-ema"
    threshold: float = Field(default=3.0, ge=0)
    shift: float = 0.5
    ema_threshold: float = Field(default=0.25, ge=0)
    smoothing: float = 0.01
    cap: float = 0.85
    window: int = 10
    noise_std: float = 1.0

    @model_validator(mode="after")
    def _check(self):
        if self.algorithm not in DETECTOR_ALGORITHMS:
            raise ValueError(f"unknown detector algorithm: {self.algorithm}")
        if self.algorithm in ("cusum", "cs-ema") and self.shift <= 0:
            raise ValueError("mean shift b must be positive")
        if self.algorithm in ("ema", "cs-ema"):
            if not 0 < self.smoothing <= 1:
                raise ValueError("smoothing factor must lie in (0, 1]")
            if self.cap <= self.ema_threshold:
                raise ValueError("residual cap R must exceed the EMA threshold")
        if self.algorithm in ("l1tw", "l2tw") and self.window < 1:
            raise ValueError("window length must be at least 1")
        if self.noise_std <= 0:
            raise ValueError("noise std must be positive")
        return self


class DetectorRow(BaseModel):
    """One row of the detector table: all algorithm settings for a measured state."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    noise: float = Field(gt=0)
    l1tw_threshold: float
    l1tw_window: int
    l2tw_threshold: float
    l2tw_window: int
    cusum_threshold: float
    cusum_shift: float
    csema_threshold: float
    csema_shift: float
    csema_ema_threshold: float
    csema_smoothing: float
    csema_cap: float

    def params(self, algorithm: str) -> DetectorParams:
        if algorithm == "cusum":
            return DetectorParams(algorithm=algorithm, threshold=self.cusum_threshold,
                                  shift=self.cusum_shift, noise_std=self.noise)
        if algorithm in ("cs-ema", "ema"):
            return DetectorParams(algorithm=algorithm, threshold=self.csema_threshold,
                                  shift=self.csema_shift, ema_threshold=self.csema_ema_threshold,
                                  smoothing=self.csema_smoothing, cap=self.csema_cap,
                                  noise_std=self.noise)
        if algorithm == "l1tw":
            return DetectorParams(algorithm=algorithm, threshold=self.l1tw_threshold,
                                  window=self.l1tw_window, noise_std=self.noise)
        if algorithm == "l2tw":
            return DetectorParams(algorithm=algorithm, threshold=self.l2tw_threshold,
                                  window=self.l2tw_window, noise_std=self.noise)
        raise ValueError(f"Unknown detector algorithm: {algorithm}")


class DetectorTable(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    rows: Dict[str, DetectorRow]

    def params(self, state: str, algorithm: str) -> DetectorParams:
        if state not in self.rows:
            raise KeyError(f"no detector row for state {state!r}")
        return self.rows[state].params(algorithm)

    def with_overrides(self, overrides: Dict[str, Dict[str, float]]) -> "DetectorTable":
        rows = dict(self.rows)
        for state, values in overrides.items():
            rows[state] = rows[state].model_copy(update=values)
        return DetectorTable(rows=rows)


def default_detector_table(maneuver: bool = False) -> DetectorTable:
    rows = {state: DetectorRow(noise=NOISE_PARAMS[state], **values)
            for state, values in DETECTOR_TABLE.items()}
    table = DetectorTable(rows=rows)
    return table.with_overrides(MANEUVER_OVERRIDES) if maneuver else table


class EstimatorConfig(BaseModel):
    """Buffer and fixed fusion gains; gains are applied once per fused sample."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    buffer_time: float = Field(default=0.5, ge=0)
    buffer: bool = True
    frontend_gain: float = Field(default=0.5, gt=0, le=1)
    gps_position_gain: float = Field(default=0.15, ge=0, le=1)
    gps_position_velocity_gain: float = Field(default=0.05, ge=0, le=1)
    gps_velocity_gain: float = Field(default=0.3, ge=0, le=1)
    baro_gain: float = Field(default=0.05, ge=0, le=1)
    baro_velocity_gain: float = Field(default=0.01, ge=0, le=1)
    mag_gain: float = Field(default=0.02, ge=0, le=1)
    tilt_gain: float = Field(default=0.05, ge=0, le=1)

    @property
    def effective_buffer_time(self) -> float:
        return self.buffer_time if self.buffer else 0.0


class ControllerGains(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    position: float = Field(default=0.8, gt=0)
    velocity: float = Field(default=2.0, gt=0)
    velocity_integral: float = Field(default=0.4, ge=0)
    integral_limit: float = Field(default=2.0, ge=0)
    attitude: float = Field(default=6.0, gt=0)
    rate: float = Field(default=20.0, gt=0)
    max_tilt_deg: float = Field(default=35.0, gt=0, lt=90)
    max_rate: float = Field(default=3.0, gt=0)
    max_speed_xy: float = Field(default=5.0, gt=0)
    max_speed_z: float = Field(default=2.0, gt=0)
    acceptance_radius: float = Field(default=0.5, gt=0)


class RecoveryConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    enabled: bool = True
    priorities: Dict[str, List[str]] = Field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_PRIORITIES.items()})

    @model_validator(mode="after")
    def _se_is_bottom(self):
        for kind, order in self.priorities.items():
            if not order or order[0] != "se" or order.count("se") != 1:
                raise ValueError(f"priority for {kind} must start with the single bottom source 'se'")
        return self


class EvalConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    alarm_bounds: Dict[str, float] = Field(default_factory=lambda: {"gyro": 1.0, "gps": 20.0})
    default_alarm_bound: float = Field(default=5.0, gt=0)
    recovery_error: float = Field(default=3.0, gt=0)
    recovery_cap: float = Field(default=300.0, gt=0)
    divergence_limit: float = Field(default=5.0, gt=0)
    records_per_case: int = Field(default=50, gt=0)
    roc_points: int = Field(default=50, gt=1)

    def alarm_bound(self, sensor: str) -> float:
        """Upper time bound for an effective alarm on an attacked sensor type."""
        return self.alarm_bounds.get(sensor, self.default_alarm_bound)


# ---------------------------------------------------------------- INI plumbing

def _line_index(path: Path) -> Dict[Tuple[str, str], int]:
    """Map (section, key) to the line it was written on, for error messages."""
    index: Dict[Tuple[str, str], int] = {}
    section = ""
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            index[(section, "")] = lineno
            continue
        for sep in ("=", ":"):
            if sep in line:
                index[(section, line.split(sep, 1)[0].strip().lower())] = lineno
                break
    return index


class IniFile:
    """A parsed INI file that remembers where each key came from."""

    def __init__(self, path):
        self.path = Path(path)
        if not self.path.exists():
            raise ConfigError("file not found", str(self.path))
        self.parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        try:
            self.parser.read_string(self.path.read_text(), source=str(self.path))
        except configparser.Error as exc:
            raise ConfigError(getattr(exc, "message", str(exc)).splitlines()[0], str(self.path),
                              getattr(exc, "lineno", None)) from exc
        self.lines = _line_index(self.path)

    def sections(self) -> List[str]:
        return self.parser.sections()

    def has(self, section: str) -> bool:
        return self.parser.has_section(section)

    def values(self, section: str) -> Dict[str, str]:
        if not self.parser.has_section(section):
            return {}
        return dict(self.parser.items(section))

    def error(self, message: str, section: str = "", key: str = "") -> ConfigError:
        lineno = self.lines.get((section, key.lower())) or self.lines.get((section, ""))
        return ConfigError(message, str(self.path), lineno)

    def resolve(self, relative: str) -> Path:
        candidate = Path(relative)
        return candidate if candidate.is_absolute() else self.path.parent / candidate

    def build(self, model: Type[M], section: str, data: Optional[Dict[str, Any]] = None, **base) -> M:
        """Validate a section into a model, pointing errors at the offending line."""
        fields = dict(base)
        fields.update(data if data is not None else self.values(section))
        try:
            return model(**fields)
        except ValidationError as exc:
            err = exc.errors()[0]
            key = str(err["loc"][0]) if err.get("loc") else ""
            raise self.error(f"[{section}] {key}: {err['msg']}", section, key) from exc


def build_model(model: Type[M], data: Dict[str, Any]) -> M:
    """Validate a plain dict into a model, reporting failures as ConfigError."""
    try:
        return model(**data)
    except ValidationError as exc:
        err = exc.errors()[0]
        loc = ".".join(str(p) for p in err.get("loc", ()))
        raise ConfigError(f"{loc}: {err['msg']}") from exc


def parse_vector(text: str, size: Optional[int] = None) -> Tuple[float, ...]:
    values = tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())
    if size is not None and len(values) != size:
        raise ValueError(f"expected {size} comma-separated numbers, got {len(values)}")
    return values


def parse_list(text: str) -> List[str]:
    return [v.strip().lower() for v in text.split(",") if v.strip()]


def load_vehicle(path) -> Tuple[PhysicalParams, BatteryConfig]:
    """Read a vehicle file: a [vehicle] section plus an optional [battery] section."""
    ini = IniFile(path)
    if not ini.has("vehicle"):
        raise ini.error("missing [vehicle] section")
    params = ini.build(PhysicalParams, "vehicle")
    battery = ini.build(BatteryConfig, "battery")
    return params, battery


def load_detector_table(path) -> DetectorTable:
    """Read a detector file: one section per measured state."""
    ini = IniFile(path)
    base = default_detector_table()
    rows = dict(base.rows)
    for section in ini.sections():
        if section not in DETECTOR_STATES:
            raise ini.error(f"unknown detector state [{section}]", section)
        merged = rows[section].model_dump()
        merged.update(ini.values(section))
        rows[section] = ini.build(DetectorRow, section, merged)
    return DetectorTable(rows=rows)


def write_ini(path, sections: Dict[str, Dict[str, Any]], header: Optional[str] = None) -> Path:
    """Write plain key-value sections; floats are written with full precision."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    if header:
        lines.extend(f"# {h}" for h in header.splitlines())
        lines.append("")
    for name, values in sections.items():
        lines.append(f"[{name}]")
        for key, value in values.items():
            if isinstance(value, (list, tuple)):
                value = ", ".join(_fmt(v) for v in value)
            else:
                value = _fmt(value)
            lines.append(f"{key} = {value}")
        lines.append("")
    path.write_text("\n".join(lines))
    logger.info("wrote %s", path)
    return path


def detector_table_sections(table: DetectorTable) -> Dict[str, Dict[str, Any]]:
    return {state: row.model_dump() for state, row in table.rows.items()}


def _fmt(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(float(value))
    return str(value)
