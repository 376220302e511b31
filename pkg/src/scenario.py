"""Scenario and batch-matrix settings, read from INI files."""
import logging
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .attacks import AttackSpec, compose_multi, parse_notation
from .config import (
    DETECTOR_ALGORITHMS, MANEUVER_OVERRIDES, REALWORLD_BATTERY, REALWORLD_QUAD, SIM_BATTERY, SIM_QUAD,
    BatteryConfig, ConfigError, ControllerGains, DetectorTable, EstimatorConfig, EvalConfig, IniFile,
    PhysicalParams, RecoveryConfig, SensorSuiteConfig, WindConfig, default_detector_table,
    load_detector_table, load_vehicle, parse_list, parse_vector,
)
from .missions import MISSION_KINDS

logger = logging.getLogger(__name__)

MODEL_KINDS = ("full", "coarse")
ATTACK_FREE = "none"


def sim_vehicle() -> PhysicalParams:
    return PhysicalParams(**SIM_QUAD)


def realworld_vehicle() -> PhysicalParams:
    return PhysicalParams(**REALWORLD_QUAD)


class ScenarioConfig(BaseModel):
    """Everything one flight needs."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str = "scenario"
    mission: str = "hovering"
    hover_time: float = Field(default=300.0, ge=0)
    maneuver_laps: int = Field(default=10, ge=1)
    seed: int = 0
    time_limit: Optional[float] = Field(default=None, gt=0)
    detector: str = "cs-ema"
    model: str = "full"
    vehicle: PhysicalParams = Field(default_factory=sim_vehicle)
    battery: BatteryConfig = Field(default_factory=lambda: BatteryConfig(**SIM_BATTERY))
    sensors: SensorSuiteConfig = Field(default_factory=SensorSuiteConfig)
    wind: WindConfig = Field(default_factory=WindConfig)
    detectors: DetectorTable = Field(default_factory=default_detector_table)
    default_detectors: bool = True
    estimator: EstimatorConfig = Field(default_factory=EstimatorConfig)
    controller: ControllerGains = Field(default_factory=ControllerGains)
    recovery: RecoveryConfig = Field(default_factory=RecoveryConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    attacks: Tuple[AttackSpec, ...] = ()
    alarm_delay: float = Field(default=0.0, ge=0)
    log_residuals: bool = True

    @model_validator(mode="after")
    def _check(self):
        if self.mission not in MISSION_KINDS:
            raise ValueError(f"unknown mission kind: {self.mission}")
        if self.detector not in DETECTOR_ALGORITHMS:
            raise ValueError(f"unknown detector algorithm: {self.detector}")
        if self.model not in MODEL_KINDS:
            raise ValueError(f"unknown model fidelity: {self.model}")
        compose_multi(self.attacks)
        return self

    def attack(self) -> Optional[AttackSpec]:
        return compose_multi(self.attacks)

    def model_params(self) -> PhysicalParams:
        """Parameters the defense-side model runs on."""
        return self.vehicle.coarse() if self.model == "coarse" else self.vehicle

    def detector_table(self) -> DetectorTable:
        if self.mission == "maneuver" and self.default_detectors:
            return self.detectors.with_overrides(MANEUVER_OVERRIDES)
        return self.detectors

    def available(self) -> Dict[str, int]:
        s = self.sensors
        return {"gps": s.gps_count, "gps_velocity": s.gps_count, "gyro": s.imu_count,
                "accel": s.imu_count, "baro": s.baro_count, "mag": s.mag_count}

    def replace(self, **changes) -> "ScenarioConfig":
        return self.model_validate({**self.__dict__, **changes})


# ---------------------------------------------------------------- batch matrix

class Variant(BaseModel):
    """One defense configuration compared inside a batch."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str = "default"
    detector: Optional[str] = None
    model: Optional[str] = None
    recovery: Optional[bool] = None
    buffer: Optional[bool] = None
    alarm_delay: Optional[float] = Field(default=None, ge=0)
    wind_mean: Optional[Tuple[float, float, float]] = None

    def apply(self, cfg: ScenarioConfig) -> ScenarioConfig:
        changes = {}
        if self.detector is not None:
            changes["detector"] = self.detector
        if self.model is not None:
            changes["model"] = self.model
        if self.recovery is not None:
            changes["recovery"] = cfg.recovery.model_copy(update={"enabled": self.recovery})
        if self.buffer is not None:
            changes["estimator"] = cfg.estimator.model_copy(update={"buffer": self.buffer})
        if self.alarm_delay is not None:
            changes["alarm_delay"] = self.alarm_delay
        if self.wind_mean is not None:
            changes["wind"] = cfg.wind.model_copy(update={"mean": self.wind_mean})
        return cfg.replace(**changes) if changes else cfg


class MatrixConfig(BaseModel):
    """mission x attack x variant grid, each case flown over the same seeds."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str = "matrix"
    base: ScenarioConfig = Field(default_factory=ScenarioConfig)
    missions: Tuple[str, ...] = ("hovering",)
    attacks: Tuple[str, ...] = (ATTACK_FREE,)
    attack_start: float = Field(default=0.0, ge=0)
    attack_trigger: str = "waypoint"
    variants: Tuple[Variant, ...] = (Variant(),)
    seeds: int = Field(default=50, ge=0)
    base_seed: int = 0

    @model_validator(mode="after")
    def _check(self):
        for mission in self.missions:
            if mission not in MISSION_KINDS:
                raise ValueError(f"unknown mission kind: {mission}")
        names = [v.name for v in self.variants]
        if len(set(names)) != len(names):
            raise ValueError("variant names must be unique")
        return self

    def attack_spec(self, notation: str) -> Optional[AttackSpec]:
        if notation == ATTACK_FREE:
            return None
        return parse_notation(notation, self.base.available(), self.attack_start, self.attack_trigger)

    def cases(self) -> List[Tuple[str, str, Variant]]:
        return [(m, a, v) for m in self.missions for a in self.attacks for v in self.variants]

    def seed_list(self) -> List[int]:
        return [self.base_seed + i for i in range(self.seeds)]

    def scenario(self, mission: str, attack: str, variant: Variant, seed: int) -> ScenarioConfig:
        spec = self.attack_spec(attack)
        cfg = self.base.replace(name=f"{mission}|{attack}|{variant.name}", mission=mission, seed=seed,
                                attacks=(spec,) if spec is not None else ())
        return variant.apply(cfg)


# ---------------------------------------------------------------- INI loading

_VECTOR_FIELDS = {"mean", "sigma", "wind_mean"}
_TUPLE_INT_FIELDS = {"instances", "axes"}


def _convert(values: Dict[str, str]) -> Dict[str, object]:
    out: Dict[str, object] = {}
    for key, text in values.items():
        if key in _VECTOR_FIELDS:
            out[key] = parse_vector(text, 3)
        elif key in _TUPLE_INT_FIELDS:
            out[key] = tuple(int(v) for v in parse_vector(text))
        else:
            out[key] = text
    return out


def _attack_sections(ini: IniFile, available: Dict[str, int]) -> List[AttackSpec]:
    specs = []
    for section in ini.sections():
        if not section.startswith("attack."):
            continue
        values = ini.values(section)
        try:
            fields = _convert(values)
        except ValueError as exc:
            raise ini.error(f"[{section}] {exc}", section) from exc
        if "notation" in fields:
            start = float(fields.get("start", 0.0))
            trigger = str(fields.get("trigger", "time"))
            try:
                specs.append(parse_notation(str(fields["notation"]), available, start, trigger))
            except ValueError as exc:
                raise ini.error(str(exc), section, "notation") from exc
            continue
        specs.append(ini.build(AttackSpec, section, fields))
    return specs


def load_scenario(path, seed: Optional[int] = None) -> ScenarioConfig:
    """Read a scenario file. Referenced vehicle/detector files resolve relative to it."""
    ini = IniFile(path)
    if not ini.has("scenario"):
        raise ini.error("missing [scenario] section")
    top = dict(ini.values("scenario"))
    fields: Dict[str, object] = {}

    vehicle_ref = top.pop("vehicle", None)
    if vehicle_ref:
        fields["vehicle"], fields["battery"] = load_vehicle(ini.resolve(vehicle_ref))
    if ini.has("vehicle"):
        base = (fields.get("vehicle") or sim_vehicle()).model_dump()
        fields["vehicle"] = ini.build(PhysicalParams, "vehicle", {**base, **ini.values("vehicle")})
    if ini.has("battery"):
        base = (fields.get("battery") or BatteryConfig(**SIM_BATTERY)).model_dump()
        fields["battery"] = ini.build(BatteryConfig, "battery", {**base, **ini.values("battery")})

    detectors_ref = top.pop("detectors", None)
    if detectors_ref:
        fields["detectors"] = load_detector_table(ini.resolve(detectors_ref))
        fields["default_detectors"] = False

    for name, model in (("sensors", SensorSuiteConfig), ("estimator", EstimatorConfig),
                        ("controller", ControllerGains)):
        if ini.has(name):
            fields[name] = ini.build(model, name)
    if ini.has("wind"):
        try:
            fields["wind"] = ini.build(WindConfig, "wind", _convert(ini.values("wind")))
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ini.error(f"[wind] {exc}", "wind") from exc
    if ini.has("recovery"):
        values = ini.values("recovery")
        enabled = values.pop("enabled", "true")
        priorities = {k: list(v) for k, v in RecoveryConfig().priorities.items()}
        priorities.update({k: parse_list(v) for k, v in values.items()})
        fields["recovery"] = ini.build(RecoveryConfig, "recovery", {"enabled": enabled, "priorities": priorities})
    if ini.has("eval"):
        values = ini.values("eval")
        bounds = {k[len("alarm_bound_"):]: float(v) for k, v in values.items() if k.startswith("alarm_bound_")}
        rest = {k: v for k, v in values.items() if not k.startswith("alarm_bound_")}
        if bounds:
            rest["alarm_bounds"] = {**EvalConfig().alarm_bounds, **bounds}
        fields["eval"] = ini.build(EvalConfig, "eval", rest)

    notation = top.pop("attack", None)
    sensors = fields.get("sensors") or SensorSuiteConfig()
    available = ScenarioConfig(sensors=sensors).available()
    attacks = _attack_sections(ini, available)
    if notation:
        start = float(top.pop("attack_start", 0.0))
        trigger = top.pop("attack_trigger", "time")
        for text in notation.split(";"):
            try:
                attacks.append(parse_notation(text, available, start, trigger))
            except ValueError as exc:
                raise ini.error(str(exc), "scenario", "attack") from exc
    fields["attacks"] = tuple(attacks)

    fields.update(top)
    if seed is not None:
        fields["seed"] = seed
    cfg = ini.build(ScenarioConfig, "scenario", fields)
    logger.info("loaded scenario %s from %s", cfg.name, ini.path)
    return cfg


def load_matrix(path) -> MatrixConfig:
    """Read a batch matrix: [matrix] lists plus optional [variant.<name>] sections."""
    ini = IniFile(path)
    if not ini.has("matrix"):
        raise ini.error("missing [matrix] section")
    values = dict(ini.values("matrix"))
    base_ref = values.pop("base", None)
    base = load_scenario(ini.resolve(base_ref)) if base_ref else ScenarioConfig()
    overrides = {k: values.pop(k) for k in ("hover_time", "time_limit", "maneuver_laps") if k in values}
    if overrides:
        base = ini.build(ScenarioConfig, "matrix", {**base.__dict__, **overrides})

    fields: Dict[str, object] = {"base": base}
    if "missions" in values:
        fields["missions"] = tuple(parse_list(values.pop("missions")))
    if "attacks" in values:
        fields["attacks"] = tuple(a.strip() for a in values.pop("attacks").split(",") if a.strip())
    variants = []
    for section in ini.sections():
        if section.startswith("variant."):
            data = _convert(ini.values(section))
            variants.append(ini.build(Variant, section, data, name=section[len("variant."):]))
    if variants:
        fields["variants"] = tuple(variants)
    fields.update(values)
    matrix = ini.build(MatrixConfig, "matrix", fields)
    for notation in matrix.attacks:
        try:
            matrix.attack_spec(notation)
        except ValueError as exc:
            raise ini.error(str(exc), "matrix", "attacks") from exc
    return matrix


def realworld_scenario(**changes) -> ScenarioConfig:
    """Scenario flying the real-airframe parameter set."""
    base = ScenarioConfig(vehicle=realworld_vehicle(), battery=BatteryConfig(**REALWORLD_BATTERY))
    return base.replace(**changes) if changes else base
