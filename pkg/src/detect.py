"""Residual detectors: CUSUM, capped EMA, their OR (CS-EMA) and the L1/L2 time-window baselines.

One detector runs per (sensor instance, measured state). Statistics are kept per
axis in normalized units; an instance alarms when any axis crosses.
"""
import logging
import math
from collections import deque
from dataclasses import dataclass, replace
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from .config import ConfigError, DetectorParams, DetectorTable
from .sensors import MONITORED_STATES, Measurement

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DetectorState:
    cusum: np.ndarray
    ema: np.ndarray
    window: Tuple[np.ndarray, ...] = ()
    alarm: bool = False
    t_alarm: Optional[float] = None
    component: Optional[str] = None

    @classmethod
    def initial(cls, axes: int) -> "DetectorState":
        return cls(np.zeros(axes), np.zeros(axes))


@dataclass(frozen=True)
class DetectionReport:
    unit: str
    state: str
    alarm: bool
    t_alarm: Optional[float] = None
    component: Optional[str] = None


def normalize_residual(raw, std) -> np.ndarray:
    std = np.asarray(std, dtype=float)
    if np.any(std <= 0):
        raise ConfigError("noise std used for normalization must be positive")
    return np.asarray(raw, dtype=float) / std


def reduce_max_abs(r: np.ndarray) -> float:
    return float(np.max(np.abs(r))) if np.size(r) else 0.0


def cusum_update(state: DetectorState, r: np.ndarray, params: DetectorParams) -> Tuple[DetectorState, bool]:
    s = np.maximum(0.0, state.cusum + np.abs(r) - params.shift)
    return replace(state, cusum=s), bool(np.any(s > params.threshold))


def ema_update(state: DetectorState, r: np.ndarray, params: DetectorParams) -> Tuple[DetectorState, bool]:
    capped = np.clip(r, -params.cap, params.cap)
    ma = params.smoothing * capped + (1.0 - params.smoothing) * state.ema
    return replace(state, ema=ma), bool(np.any(np.abs(ma) > params.ema_threshold))


def cs_ema_update(state: DetectorState, r_cusum: np.ndarray, r_ema: np.ndarray,
                  params: DetectorParams) -> Tuple[DetectorState, bool, Optional[str]]:
    """OR of both components; also reports which one fired (CUSUM wins a tie)."""
    state, cusum_alarm = cusum_update(state, r_cusum, params)
    state, ema_alarm = ema_update(state, r_ema, params)
    component = "cusum" if cusum_alarm else ("ema" if ema_alarm else None)
    return state, cusum_alarm or ema_alarm, component


def window_statistic(window: Tuple[np.ndarray, ...], variant: str) -> np.ndarray:
    if not window:
        return np.zeros(0)
    stack = np.vstack(window)
    if variant == "l1tw":
        return np.abs(stack).sum(axis=0)
    return (stack ** 2).mean(axis=0)


def window_update(state: DetectorState, r: np.ndarray, params: DetectorParams,
                  variant: str) -> Tuple[DetectorState, bool]:
    """Sliding-window sum of |r| (L1) or mean of r^2 (L2); alarms only on a full window."""
    window = (state.window + (np.asarray(r, dtype=float),))[-params.window:]
    state = replace(state, window=window)
    if len(window) < params.window:
        return state, False
    return state, bool(np.any(window_statistic(window, variant) > params.threshold))


def score(state: DetectorState, params: DetectorParams) -> float:
    """Largest statistic-to-threshold ratio; scaling every threshold by m alarms iff score > m."""
    def ratio(values, tau):
        peak = reduce_max_abs(values)
        if tau <= 0:
            return math.inf if peak > 0 else 0.0
        return peak / tau

    algo = params.algorithm
    if algo == "cusum":
        return ratio(state.cusum, params.threshold)
    if algo == "ema":
        return ratio(state.ema, params.ema_threshold)
    if algo == "cs-ema":
        return max(ratio(state.cusum, params.threshold), ratio(state.ema, params.ema_threshold))
    if len(state.window) < params.window:
        return 0.0
    return ratio(window_statistic(state.window, algo), params.threshold)


def step_detector(state: DetectorState, r_main: np.ndarray, r_cusum: np.ndarray,
                  params: DetectorParams) -> Tuple[DetectorState, bool, Optional[str]]:
    """Advance any algorithm by one normalized sample."""
    algo = params.algorithm
    if algo == "cusum":
        state, alarm = cusum_update(state, r_cusum, params)
        return state, alarm, "cusum" if alarm else None
    if algo == "ema":
        state, alarm = ema_update(state, r_main, params)
        return state, alarm, "ema" if alarm else None
    if algo == "cs-ema":
        return cs_ema_update(state, r_cusum, r_main, params)
    state, alarm = window_update(state, r_main, params, algo)
    return state, alarm, "window" if alarm else None


def theoretical_ttd(params: DetectorParams, deviation: float) -> float:
    """Samples until a constant normalized deviation alarms from a reset state (inf if never)."""
    d = abs(deviation)

    def cusum_steps():
        if d <= params.shift:
            return math.inf
        return math.floor(params.threshold / (d - params.shift)) + 1

    def ema_steps():
        capped = min(d, params.cap)
        if capped <= params.ema_threshold:
            return math.inf
        if params.smoothing >= 1.0:
            return 1
        return math.floor(math.log(1.0 - params.ema_threshold / capped) / math.log(1.0 - params.smoothing)) + 1

    algo = params.algorithm
    if algo == "cusum":
        return cusum_steps()
    if algo == "ema":
        return ema_steps()
    if algo == "cs-ema":
        return min(cusum_steps(), ema_steps())
    if algo == "l1tw":
        return params.window if d * params.window > params.threshold else math.inf
    return params.window if d * d > params.threshold else math.inf


def residuals(state: str, value: np.ndarray, reference: Dict[str, np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    """Raw residuals against the reference: (buffered stream, newest-corrected stream)."""
    if state == "gyro":
        return value - reference["gyro"], value - reference["gyro_cs"]
    r = value - reference[state]
    return r, r


class Detector:
    """Latching detector for one (instance, state)."""

    def __init__(self, unit: str, state: str, params: DetectorParams, axes: int):
        self.unit = unit
        self.state_name = state
        self.params = params
        self.state = DetectorState.initial(axes)
        self.last_score = 0.0

    def update(self, t: float, raw_main: np.ndarray, raw_cusum: np.ndarray) -> Optional[DetectionReport]:
        """Returns a report only on the first alarm."""
        std = self.params.noise_std
        r_main = normalize_residual(raw_main, std)
        r_cusum = normalize_residual(raw_cusum, std)
        new, alarm, component = step_detector(self.state, r_main, r_cusum, self.params)
        self.last_score = score(new, self.params)
        if alarm and not self.state.alarm:
            new = replace(new, alarm=True, t_alarm=t, component=component)
            self.state = new
            return DetectionReport(self.unit, self.state_name, True, t, component)
        self.state = replace(new, alarm=self.state.alarm, t_alarm=self.state.t_alarm,
                             component=self.state.component)
        return None

    def report(self) -> DetectionReport:
        s = self.state
        return DetectionReport(self.unit, self.state_name, s.alarm, s.t_alarm, s.component)


STATE_AXES = {"gps_position": 3, "gps_velocity": 3, "baro": 1, "mag": 3, "gyro": 3, "accel": 3}


@dataclass
class _Pending:
    release: float
    report: DetectionReport


class DetectorBank:
    """All detectors of a flight, armed after takeoff, with an optional artificial alarm delay."""

    def __init__(self, unit_kinds: Dict[str, str], table: DetectorTable, algorithm: str = "cs-ema",
                 alarm_delay: float = 0.0):
        self.algorithm = algorithm
        self.alarm_delay = alarm_delay
        self.detectors: Dict[Tuple[str, str], Detector] = {}
        for unit, kind in unit_kinds.items():
            for state in MONITORED_STATES.get(kind, ()):
                self.detectors[(unit, state)] = Detector(unit, state, table.params(state, algorithm), STATE_AXES[state])
        self.armed_at: Optional[float] = None
        self.pending: deque = deque()
        self.reports: List[DetectionReport] = []
        self.last_residuals: Dict[Tuple[str, str], Tuple[np.ndarray, np.ndarray]] = {}

    @property
    def armed(self) -> bool:
        return self.armed_at is not None

    def arm(self, t: float):
        if self.armed_at is None:
            self.armed_at = t
            logger.info("detectors armed at %.2f s", t)

    def detector(self, unit: str, state: str) -> Detector:
        return self.detectors[(unit, state)]

    def keys(self) -> Iterable[Tuple[str, str]]:
        return self.detectors.keys()

    def process(self, measurements: List[Measurement], reference: Dict[str, np.ndarray], t: float) -> List[DetectionReport]:
        """Update every sampled detector; return the alarms released at this tick."""
        self.last_residuals = {}
        for m in measurements:
            for state, value in m.values.items():
                det = self.detectors.get((m.unit, state))
                if det is None:
                    continue
                main, cs = residuals(state, value, reference)
                self.last_residuals[(m.unit, state)] = (main, cs)
                if not self.armed:
                    continue
                report = det.update(t, main, cs)
                if report is not None:
                    logger.info("alarm on %s/%s at %.3f s (%s)", m.unit, state, t, report.component)
                    self.pending.append(_Pending(t + self.alarm_delay, report))
        released = []
        while self.pending and self.pending[0].release <= t + 1e-12:
            rep = self.pending.popleft().report
            if self.alarm_delay > 0:
                rep = replace(rep, t_alarm=t)
            released.append(rep)
        self.reports.extend(released)
        return released

    def first_alarms(self) -> Dict[str, DetectionReport]:
        """Earliest released alarm per instance."""
        out: Dict[str, DetectionReport] = {}
        for rep in self.reports:
            if rep.unit not in out or rep.t_alarm < out[rep.unit].t_alarm:
                out[rep.unit] = rep
        return out
