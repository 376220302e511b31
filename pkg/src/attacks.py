"""False-signal injection into sensor streams: overt biases, acoustic sinusoids, GPS drift and stealthy attacks."""
import copy
import logging
import math
import re
from typing import Dict, Iterable, List, Optional, Set, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from .config import DetectorParams
from .detect import DetectorBank, DetectorState, residuals, step_detector, window_statistic
from .sensors import TARGETS, Measurement

logger = logging.getLogger(__name__)

# chip -> (max amplitude rad/s, resonant frequency Hz)
ACOUSTIC_PRESETS: Dict[str, Tuple[float, float]] = {
    "icm20602": (0.927, 19.7),
    "icm20689": (1.899, 205.9),
}
STEALTH_SLACK = 0.01
GPS_RAMP_RATE = 1.0

_PREFIX = {"overt": "OA", "stealthy": "SA", "multi": "MA"}
_NOTATION = re.compile(
    r"^(?P<cat>OA|SA|MA)_(?P<sensors>[A-Za-z_|]+)(?:\^(?P<n>\d+)/(?P<m>\d+))?"
    r"(?:\((?P<dev>[^)]*)\))?(?:@(?P<start>[\d.]+)(?P<wp>w)?)?$"
)


class AttackSpec(BaseModel):
    """One attack, or (category multi) a simultaneous set of attacks in `components`."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    category: str = "overt"
    sensor: str = "gyro"
    instances: Tuple[int, ...] = (0,)
    profile: str = "constant"
    deviation: float = 0.0
    frequency: float = 0.0
    axes: Tuple[int, ...] = (0,)
    start: float = 0.0
    trigger: str = "time"
    max_amplitude: Optional[float] = None
    ramp_rate: float = GPS_RAMP_RATE
    components: Tuple["AttackSpec", ...] = ()

    @model_validator(mode="after")
    def _check(self):
        if self.category not in _PREFIX:
            raise ValueError(f"unknown attack category: {self.category}")
        if self.trigger not in ("time", "waypoint"):
            raise ValueError(f"unknown attack trigger: {self.trigger}")
        if self.start < 0:
            raise ValueError("attack start time must be non-negative")
        if self.category == "multi":
            if not self.components:
                raise ValueError("multi attack needs components")
            return self
        if self.sensor not in TARGETS:
            raise ValueError(f"unknown attack target sensor: {self.sensor}")
        if not self.instances:
            raise ValueError("compromised-instance mask must not be empty")
        if not self.axes or any(a < 0 or a > 2 for a in self.axes):
            raise ValueError("axes must be a non-empty subset of 0, 1, 2")
        if self.profile not in ("constant", "sinusoid", "gps_ramp", "stealthy"):
            raise ValueError(f"unknown deviation profile: {self.profile}")
        if (self.profile == "stealthy") != (self.category == "stealthy"):
            raise ValueError("stealthy profile goes with the stealthy category only")
        if self.profile == "gps_ramp" and self.sensor != "gps":
            raise ValueError("joint position/velocity profile applies to GPS only")
        if self.profile == "sinusoid":
            if self.deviation <= 0 or self.frequency <= 0:
                raise ValueError("sinusoid needs positive amplitude and frequency")
            if self.max_amplitude is not None and self.deviation > self.max_amplitude:
                raise ValueError("sinusoid amplitude exceeds its maximum")
        return self

    def parts(self) -> Tuple["AttackSpec", ...]:
        if self.category != "multi":
            return (self,)
        return tuple(p for c in self.components for p in c.parts())

    def notation(self, available: Optional[Dict[str, int]] = None) -> str:
        if self.category == "multi":
            names = "|".join(p.sensor.capitalize() for p in self.parts())
            return f"MA_{names}"
        total = (available or {}).get(self.sensor, len(self.instances))
        if self.profile == "sinusoid":
            dev = f"{self.deviation:.3f}@{self.frequency:g}Hz"
        elif self.profile == "stealthy":
            dev = ""
        elif self.profile == "gps_ramp":
            dev = f"ramp:{self.ramp_rate:g}"
        else:
            dev = f"{self.deviation:.2f}"
        body = f"{_PREFIX[self.category]}_{self.sensor}^{len(self.instances)}/{total}"
        return f"{body}({dev})" if dev else body


def parse_notation(text: str, available: Dict[str, int], start: float = 0.0,
                   trigger: str = "time") -> AttackSpec:
    """Parse `OA_gyro^3/3(0.60)`, `SA_gyro^1/3`, `OA_gyro^3/3(icm20602)` or `MA_mag|accel|gyro(0.6)`.

    A trailing `@60` sets the start time; `@10w` starts 10 s after the preset waypoint.
    """
    m = _NOTATION.match(text.strip())
    if not m:
        raise ValueError(f"cannot parse attack notation: {text!r}")
    if m.group("start"):
        start = float(m.group("start"))
        trigger = "waypoint" if m.group("wp") else "time"
    cat = {"OA": "overt", "SA": "stealthy", "MA": "multi"}[m.group("cat")]
    dev_text = (m.group("dev") or "").strip().lower()
    sensors = [s.lower() for s in m.group("sensors").split("|")]

    def one(sensor: str, category: str, count: Optional[int]) -> AttackSpec:
        n = count if count is not None else available.get(sensor, 1)
        fields = dict(category=category, sensor=sensor, instances=tuple(range(n)), start=start, trigger=trigger)
        if category == "stealthy":
            fields["profile"] = "stealthy"
        elif dev_text in ACOUSTIC_PRESETS:
            amp, freq = ACOUSTIC_PRESETS[dev_text]
            fields.update(profile="sinusoid", deviation=amp, frequency=freq, max_amplitude=amp)
        elif dev_text.startswith("ramp"):
            rate = float(dev_text[4:].strip(":") or GPS_RAMP_RATE)
            fields.update(profile="gps_ramp", ramp_rate=rate)
        else:
            fields["deviation"] = float(dev_text) if dev_text else 0.0
        return AttackSpec(**fields)

    if cat == "multi":
        return compose_multi([one(s, "overt", None) for s in sensors])
    count = int(m.group("n")) if m.group("n") else None
    if count is not None and count > available.get(sensors[0], count):
        raise ValueError(f"{text}: only {available[sensors[0]]} {sensors[0]} instances available")
    return one(sensors[0], cat, count)


def compose_multi(specs: Iterable[Optional[AttackSpec]]) -> Optional[AttackSpec]:
    """Apply several attacks at once; empty gives no attack, a single spec is returned unchanged."""
    parts = [p for s in specs if s is not None for p in s.parts()]
    if not parts:
        return None
    if len(parts) == 1:
        return parts[0]
    for i, a in enumerate(parts):
        for b in parts[i + 1:]:
            shared = a.sensor == b.sensor and set(a.instances) & set(b.instances) and set(a.axes) & set(b.axes)
            if shared and (a.start != b.start or a.trigger != b.trigger):
                raise ValueError(f"overlapping attacks on {a.sensor} with different start times")
    return AttackSpec(category="multi", components=tuple(parts), start=min(p.start for p in parts))


def acoustic_signal(spec: AttackSpec, t: float, t_atk: float) -> float:
    return spec.deviation * math.cos(2.0 * math.pi * spec.frequency * (t - t_atk))


def deviation_vector(spec: AttackSpec, state: str, t: float, t_atk: float, size: int) -> np.ndarray:
    """Additive deviation of an overt spec for one measured state."""
    dev = np.zeros(size)
    if spec.profile == "constant":
        value = spec.deviation
    elif spec.profile == "sinusoid":
        value = acoustic_signal(spec, t, t_atk)
    elif spec.profile == "gps_ramp":
        value = spec.ramp_rate * (t - t_atk) if state == "gps_position" else spec.ramp_rate
    else:
        return dev
    for axis in spec.axes:
        if axis < size:
            dev[axis] = value
    return dev


def apply_overt(value: np.ndarray, spec: AttackSpec, state: str, t: float, t_atk: float) -> np.ndarray:
    if t < t_atk:
        return value
    return value + deviation_vector(spec, state, t, t_atk, len(value))


def spec_states(spec: AttackSpec) -> Tuple[str, ...]:
    _, state = TARGETS[spec.sensor]
    if spec.profile == "gps_ramp":
        return ("gps_position", "gps_velocity")
    return (state,)


def spec_units(spec: AttackSpec) -> List[str]:
    kind, _ = TARGETS[spec.sensor]
    return [f"{kind}{i}" for i in spec.instances]


# ---------------------------------------------------------------- stealthy adversary

def stealthy_shift(state: DetectorState, params: DetectorParams, r_main: np.ndarray,
                   r_cusum: np.ndarray, slack: float = STEALTH_SLACK) -> np.ndarray:
    """Largest non-negative normalized shift per axis that keeps every statistic under (1 - slack) of its threshold."""
    bound = np.full(r_main.shape, np.inf)
    algo = params.algorithm
    if algo in ("cusum", "cs-ema"):
        room = params.threshold * (1.0 - slack) - state.cusum + params.shift
        bound = np.minimum(bound, room - r_cusum)
    if algo in ("ema", "cs-ema"):
        lam = params.smoothing
        c = (params.ema_threshold * (1.0 - slack) - (1.0 - lam) * state.ema) / lam
        bound = np.minimum(bound, np.where(c < params.cap, c - r_main, np.inf))
    if algo in ("l1tw", "l2tw"):
        head = state.window[-(params.window - 1):] if params.window > 1 else ()
        partial = window_statistic(head, algo) if head else np.zeros(r_main.shape)
        if algo == "l1tw":
            room = params.threshold * (1.0 - slack) - partial
        else:
            total = partial * len(head) if head else partial
            room = np.sqrt(np.maximum(0.0, params.window * params.threshold * (1.0 - slack) - total))
        bound = np.minimum(bound, room - r_main)
    return np.maximum(0.0, bound)


class StealthyAdversary:
    """Mirrors the defender's detectors and injects the largest deviation that stays silent."""

    def __init__(self, spec: AttackSpec, bank: DetectorBank, slack: float = STEALTH_SLACK):
        self.spec = spec
        self.bank = bank
        self.slack = slack
        self.units = set(spec_units(spec))
        self.state = spec_states(spec)[0]
        self.mirror: Dict[str, DetectorState] = {}
        self.last_injection: Dict[str, np.ndarray] = {}

    def _mirrored(self, unit: str) -> DetectorState:
        if unit not in self.mirror:
            self.mirror[unit] = copy.deepcopy(self.bank.detector(unit, self.state).state)
        return self.mirror[unit]

    def inject(self, m: Measurement, reference: Dict[str, np.ndarray]) -> np.ndarray:
        det = self.bank.detector(m.unit, self.state)
        params = det.params
        value = m.values[self.state]
        raw_main, raw_cs = residuals(self.state, value, reference)
        state = self._mirrored(m.unit)
        shift = stealthy_shift(state, params, raw_main / params.noise_std, raw_cs / params.noise_std, self.slack)
        mask = np.zeros(value.shape, dtype=bool)
        mask[[a for a in self.spec.axes if a < value.size]] = True
        injection = np.where(mask & np.isfinite(shift), shift, 0.0) * params.noise_std
        attacked = value + injection
        if self.bank.armed:
            main, cs = residuals(self.state, attacked, reference)
            new, _, _ = step_detector(state, main / params.noise_std, cs / params.noise_std, params)
            self.mirror[m.unit] = new
        self.last_injection[m.unit] = injection
        return attacked


def stealthy_inject(m: Measurement, reference: Dict[str, np.ndarray], adv: StealthyAdversary) -> np.ndarray:
    return adv.inject(m, reference)


class AttackInjector:
    """Owns the attack of one flight; sits between sampling and detection."""

    def __init__(self, spec: Optional[AttackSpec], bank: DetectorBank):
        self.spec = spec
        self.parts = spec.parts() if spec is not None else ()
        self.start: Dict[int, Optional[float]] = {
            i: (p.start if p.trigger == "time" else None) for i, p in enumerate(self.parts)
        }
        self.adversaries = {
            i: StealthyAdversary(p, bank) for i, p in enumerate(self.parts) if p.category == "stealthy"
        }

    def resolve_waypoint(self, reached_at: Optional[float]):
        if reached_at is None:
            return
        for i, p in enumerate(self.parts):
            if self.start[i] is None:
                self.start[i] = reached_at + p.start
                logger.info("attack %s scheduled at %.2f s", p.notation(), self.start[i])

    @property
    def t_atk(self) -> Optional[float]:
        starts = [s for s in self.start.values() if s is not None]
        return min(starts) if starts else None

    def active(self, t: float) -> bool:
        return any(s is not None and t >= s for s in self.start.values())

    def compromised(self) -> Set[str]:
        return {u for p in self.parts for u in spec_units(p)}

    def inject(self, measurements: List[Measurement], t: float, reference: Dict[str, np.ndarray]) -> bool:
        """Rewrite compromised readings in place; returns whether any attack is active."""
        active = False
        for i, p in enumerate(self.parts):
            t_atk = self.start[i]
            if t_atk is None or t < t_atk:
                continue
            active = True
            units = set(spec_units(p))
            for m in measurements:
                if m.unit not in units:
                    continue
                if p.category == "stealthy":
                    adv = self.adversaries[i]
                    m.values[adv.state] = stealthy_inject(m, reference, adv)
                    continue
                for state in spec_states(p):
                    if state in m.values:
                        m.values[state] = apply_overt(m.values[state], p, state, t, t_atk)
        return active
