"""Detector parameter selection from attack-free flights.

For every candidate setting the smallest threshold that keeps each flight
alarm-free is collected into an ascending curve. The fifth largest value is
the reference threshold and the deployed threshold adds a 5% margin.
Among the candidates the one with the shortest mean theoretical time to
detection over a set of trial deviations is kept.
"""
import itertools
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import signal

from .config import (
    CUSUM_SHIFT_GRID, DETECTOR_STATES, EMA_CAP_GRID, EMA_SMOOTHING_GRID, TTD_TRIAL_DEVIATIONS,
    DetectorParams, DetectorTable, default_detector_table, detector_table_sections, write_ini,
)
from .detect import STATE_AXES, theoretical_ttd
from .flightlog import FlightLog

logger = logging.getLogger(__name__)

MIN_FLIGHTS = 5
ALLOWED_FALSE_ALARMS = 5
SAFETY_MARGIN = 1.05


class TuneError(ValueError):
    pass


class TooFewFlights(TuneError):
    pass


# ---------------------------------------------------------------- whole-series statistics

def cusum_series(r: np.ndarray, shift: float) -> np.ndarray:
    """S_k = max(0, S_{k-1} + |r_k| - b) for every sample, via the cumulative-minimum form."""
    x = np.cumsum(np.abs(r) - shift, axis=0)
    return x - np.minimum(np.minimum.accumulate(x, axis=0), 0.0)


def ema_series(r: np.ndarray, smoothing: float, cap: float) -> np.ndarray:
    capped = np.clip(r, -cap, cap)
    return signal.lfilter([smoothing], [1.0, smoothing - 1.0], capped, axis=0)


def window_series(r: np.ndarray, window: int, variant: str) -> np.ndarray:
    """Statistic of every full window: sum of |r| (L1) or mean of r^2 (L2)."""
    values = np.abs(r) if variant == "l1tw" else r * r
    if len(values) < window:
        return np.zeros((0,) + values.shape[1:])
    kernel = np.ones(window) if variant == "l1tw" else np.full(window, 1.0 / window)
    return np.apply_along_axis(lambda col: np.convolve(col, kernel, mode="valid"), 0, values)


def _peak(stat: np.ndarray) -> float:
    return float(np.max(np.abs(stat))) if stat.size else 0.0


@dataclass
class ResidualSeries:
    """Raw residuals of one instance while its detectors were armed."""
    unit: str
    state: str
    main: np.ndarray
    cusum: np.ndarray

    def __len__(self) -> int:
        return len(self.main)


def tau_avoid(series: ResidualSeries, params: DetectorParams, component: Optional[str] = None) -> float:
    """Smallest threshold at which the detector stays silent over the whole series."""
    if len(series) == 0:
        raise TuneError(f"empty residual series for {series.unit}/{series.state}")
    main = series.main / params.noise_std
    cs = series.cusum / params.noise_std
    component = component or params.algorithm
    if component == "cusum":
        return _peak(cusum_series(cs, params.shift))
    if component == "ema":
        return _peak(ema_series(main, params.smoothing, params.cap))
    if component in ("l1tw", "l2tw"):
        return _peak(window_series(main, params.window, component))
    raise ValueError(f"no single statistic for component {component!r}")


def residual_series(log: FlightLog, state: str) -> List[ResidualSeries]:
    """Residual columns of every instance measuring `state`, from arming to the end."""
    frame = log.frame
    armed_at = log.meta.get("armed_at")
    if armed_at is not None:
        frame = frame[frame["t"] >= armed_at]
    axes = STATE_AXES[state]
    units = sorted({c[len("res_"):-len(f"_{state}_0")] for c in frame.columns
                    if c.startswith("res_") and c.endswith(f"_{state}_0")})
    out = []
    for unit in units:
        main_cols = [f"res_{unit}_{state}_{i}" for i in range(axes)]
        cs_cols = [f"rescs_{unit}_{state}_{i}" for i in range(axes)]
        if not all(c in frame.columns for c in cs_cols):
            cs_cols = main_cols
        rows = frame[main_cols[0]].notna()
        out.append(ResidualSeries(unit, state, frame.loc[rows, main_cols].to_numpy(dtype=float),
                                  frame.loc[rows, cs_cols].to_numpy(dtype=float)))
    return out


def flight_tau_avoid(flight: Sequence[ResidualSeries], params: DetectorParams,
                     component: Optional[str] = None) -> float:
    """A flight is alarm-free only if every instance of the state is."""
    if not flight:
        raise TuneError("flight has no residuals for this state")
    return max(tau_avoid(s, params, component) for s in flight)


# ---------------------------------------------------------------- curves

@dataclass
class ThresholdCurve:
    """Ascending per-flight avoidance thresholds for one candidate setting."""
    state: str
    component: str
    params: DetectorParams
    values: List[float] = field(default_factory=list)

    def __post_init__(self):
        self.values = sorted(float(v) for v in self.values)

    def fpr(self, threshold: float) -> float:
        """Fraction of flights that would alarm at `threshold`."""
        if not self.values:
            return float("nan")
        return float(np.mean(np.asarray(self.values) > threshold))

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "state": self.state,
            "component": self.component,
            "shift": self.params.shift,
            "smoothing": self.params.smoothing,
            "cap": self.params.cap,
            "window": self.params.window,
            "tau_avoid": self.values,
            "fpr": [self.fpr(v) for v in self.values],
        })


def reference_threshold(curve: ThresholdCurve, allowed: int = ALLOWED_FALSE_ALARMS) -> float:
    """The `allowed`-th largest avoidance threshold: at most that many flights alarm below it."""
    if len(curve.values) < allowed:
        raise TooFewFlights(f"need at least {allowed} flights, got {len(curve.values)}")
    return curve.values[-allowed]


def final_threshold(tau_ref: float, margin: float = SAFETY_MARGIN) -> float:
    if tau_ref < 0:
        raise TuneError("reference threshold must be non-negative")
    if tau_ref == 0:
        logger.warning("reference threshold is 0; the detector never moves on this data")
        warnings.warn("degenerate zero threshold", UserWarning, stacklevel=2)
    return margin * tau_ref


def threshold_curve(flights: Sequence[Sequence[ResidualSeries]], state: str, params: DetectorParams,
                    component: str) -> ThresholdCurve:
    return ThresholdCurve(state, component, params, [flight_tau_avoid(f, params, component) for f in flights])


# ---------------------------------------------------------------- candidate selection

@dataclass
class StateTuning:
    state: str
    params: DetectorParams
    mean_ttd: float
    curves: List[ThresholdCurve]


def _mean_ttd(params: DetectorParams, deviations: Sequence[float]) -> float:
    ttds = [theoretical_ttd(params, d) for d in deviations]
    return float(np.mean(ttds)) if all(math.isfinite(t) for t in ttds) else math.inf


def _candidates(algorithm: str, base: DetectorParams) -> List[Dict[str, DetectorParams]]:
    """Per candidate: the params each tuned component is measured with."""
    def cusum(b):
        return base.model_copy(update={"algorithm": "cusum", "shift": b})

    def ema(lam, cap):
        return DetectorParams(algorithm="ema", ema_threshold=0.0, smoothing=lam, cap=cap,
                              noise_std=base.noise_std)

    if algorithm == "cusum":
        return [{"cusum": cusum(b)} for b in CUSUM_SHIFT_GRID]
    if algorithm == "ema":
        return [{"ema": ema(lam, cap)} for lam, cap in itertools.product(EMA_SMOOTHING_GRID, EMA_CAP_GRID)]
    if algorithm == "cs-ema":
        return [{"cusum": cusum(b), "ema": ema(lam, cap)}
                for b, lam, cap in itertools.product(CUSUM_SHIFT_GRID, EMA_SMOOTHING_GRID, EMA_CAP_GRID)]
    if algorithm in ("l1tw", "l2tw"):
        return [{algorithm: base}]
    raise ValueError(f"Unknown detector algorithm: {algorithm}")


def tune_state(flights: Sequence[Sequence[ResidualSeries]], state: str, algorithm: str,
               base: DetectorParams, deviations: Sequence[float] = TTD_TRIAL_DEVIATIONS) -> StateTuning:
    """Thresholds for every candidate, then the candidate detecting those deviations fastest."""
    if len(flights) < MIN_FLIGHTS:
        raise TooFewFlights(f"need at least {MIN_FLIGHTS} attack-free flights, got {len(flights)}")
    cache: Dict[Tuple[str, DetectorParams], ThresholdCurve] = {}
    best: Optional[StateTuning] = None
    for cand in _candidates(algorithm, base):
        thresholds = {}
        for component, params in cand.items():
            key = (component, params)
            if key not in cache:
                cache[key] = threshold_curve(flights, state, params, component)
            thresholds[component] = final_threshold(reference_threshold(cache[key]))
        update = {"algorithm": algorithm}
        if "cusum" in cand:
            update.update(threshold=thresholds["cusum"], shift=cand["cusum"].shift)
        if "ema" in cand:
            if thresholds["ema"] >= cand["ema"].cap:
                logger.debug("%s: skipping lambda=%g R=%g, threshold %.3g reaches the cap", state,
                             cand["ema"].smoothing, cand["ema"].cap, thresholds["ema"])
                continue
            update.update(ema_threshold=thresholds["ema"], smoothing=cand["ema"].smoothing, cap=cand["ema"].cap)
        if algorithm in ("l1tw", "l2tw"):
            update["threshold"] = thresholds[algorithm]
        params = base.model_copy(update=update)
        ttd = _mean_ttd(params, deviations)
        if best is None or ttd < best.mean_ttd:
            best = StateTuning(state, params, ttd, [])
    if best is None:
        raise TuneError(f"{state}: no candidate setting keeps the EMA threshold below its cap")
    best.curves = list(cache.values())
    logger.info("%s/%s: %s (mean theoretical TTD %.1f samples)", state, algorithm,
                best.params.model_dump(exclude={"algorithm", "noise_std"}), best.mean_ttd)
    return best


def _row_update(algorithm: str, params: DetectorParams) -> Dict[str, float]:
    if algorithm == "cusum":
        return {"cusum_threshold": params.threshold, "cusum_shift": params.shift}
    if algorithm == "l1tw":
        return {"l1tw_threshold": params.threshold}
    if algorithm == "l2tw":
        return {"l2tw_threshold": params.threshold}
    update = {"csema_ema_threshold": params.ema_threshold, "csema_smoothing": params.smoothing,
              "csema_cap": params.cap}
    if algorithm == "cs-ema":
        update.update(csema_threshold=params.threshold, csema_shift=params.shift)
    return update


@dataclass
class TuneResult:
    table: DetectorTable
    states: Dict[str, StateTuning]

    def curve_frame(self) -> pd.DataFrame:
        frames = [c.frame() for s in self.states.values() for c in s.curves]
        return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()


def tune_detectors(logs: Sequence[FlightLog], algorithm: str = "cs-ema",
                   states: Optional[Sequence[str]] = None, base: Optional[DetectorTable] = None) -> TuneResult:
    """Tune every state found in the attack-free logs; rows of other states are kept."""
    if len(logs) < MIN_FLIGHTS:
        raise TooFewFlights(f"need at least {MIN_FLIGHTS} attack-free flights, got {len(logs)}")
    base = base or default_detector_table()
    rows = dict(base.rows)
    tuned: Dict[str, StateTuning] = {}
    for state in states or DETECTOR_STATES:
        flights = [residual_series(log, state) for log in logs]
        flights = [f for f in flights if f and all(len(s) for s in f)]
        if not flights:
            logger.info("%s: no residuals in the logs, row kept", state)
            continue
        result = tune_state(flights, state, algorithm, base.params(state, algorithm))
        tuned[state] = result
        rows[state] = rows[state].model_copy(update=_row_update(algorithm, result.params))
    if not tuned:
        raise TuneError("no residual columns in the logs; fly them with residual logging on")
    return TuneResult(DetectorTable(rows=rows), tuned)


def write_detector_table(path, table: DetectorTable, header: Optional[str] = None):
    return write_ini(path, detector_table_sections(table), header=header)
