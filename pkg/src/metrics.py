"""Detection and recovery metrics: per-instance classification, TTD, recovery duration, ROC and AUC."""
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd

from .attacks import AttackSpec, spec_units
from .config import EvalConfig

CLASSES = ("TP", "FP", "TN", "FN")


@dataclass(frozen=True)
class Censored:
    """A duration that may only be known as a lower bound."""
    value: float
    censored: bool = False

    def __str__(self) -> str:
        return f">={self.value:g}" if self.censored else f"{self.value:g}"


def _bound_key(sensor: str) -> str:
    return "gps" if sensor.startswith("gps") else sensor


def alarm_bounds(spec: Optional[AttackSpec], cfg: EvalConfig) -> Dict[str, float]:
    """Effective-alarm window length per compromised instance."""
    bounds: Dict[str, float] = {}
    if spec is None:
        return bounds
    for part in spec.parts():
        b = cfg.alarm_bound(_bound_key(part.sensor))
        for unit in spec_units(part):
            bounds[unit] = min(b, bounds.get(unit, b))
    return bounds


def classify_detection(alarms: Dict[str, float], units: Iterable[str], spec: Optional[AttackSpec],
                       t_atk: Optional[float], cfg: EvalConfig) -> Dict[str, str]:
    """TP/FP/TN/FN for every monitored instance of one flight."""
    bounds = alarm_bounds(spec, cfg) if t_atk is not None else {}
    out = {}
    for unit in units:
        t_alarm = alarms.get(unit)
        if unit in bounds:
            effective = t_alarm is not None and t_atk <= t_alarm <= t_atk + bounds[unit]
            out[unit] = "TP" if effective else "FN"
        else:
            out[unit] = "FP" if t_alarm is not None else "TN"
    return out


def ttd(alarms: Dict[str, float], classes: Dict[str, str], t_atk: Optional[float],
        bound: float) -> Optional[Censored]:
    """Earliest effective alarm minus attack start; censored at the bound when nothing was caught."""
    if t_atk is None:
        return None
    hits = [alarms[u] for u, c in classes.items() if c == "TP"]
    if not hits:
        return Censored(bound, True)
    return Censored(max(0.0, min(hits) - t_atk))


def recovery_duration(t: np.ndarray, p_true: np.ndarray, p_ctl: np.ndarray, t_alarm: Optional[float],
                      cfg: EvalConfig) -> Optional[Censored]:
    """Time from the first alarm until the controller's position error first exceeds the bound."""
    if t_alarm is None or len(t) == 0:
        return None
    d = np.linalg.norm(np.asarray(p_true) - np.asarray(p_ctl), axis=1)
    after = np.asarray(t) >= t_alarm - 1e-12
    exceeded = np.flatnonzero(after & (d > cfg.recovery_error))
    if exceeded.size:
        duration, censored = float(t[exceeded[0]] - t_alarm), False
    else:
        duration, censored = float(t[-1] - t_alarm), True
    if duration >= cfg.recovery_cap:
        return Censored(cfg.recovery_cap, True)
    return Censored(max(0.0, duration), censored)


def threshold_multipliers(count: int = 50, low: float = 0.1, high: float = 10.0) -> np.ndarray:
    return np.logspace(math.log10(low), math.log10(high), count)


class ScoreSweep:
    """First time the running peak score of each instance passes each threshold multiplier.

    Scores are statistic/threshold ratios, so scaling every threshold by m alarms
    exactly when the score passes m. Compromised instances are also tracked from
    the attack start on, which keeps the sweep's TPR monotone in m.
    """

    def __init__(self, units: Iterable[str], multipliers: np.ndarray):
        self.multipliers = np.asarray(multipliers, dtype=float)
        self.units = list(units)
        n = len(self.multipliers)
        self.peak = {u: 0.0 for u in self.units}
        self.post_peak = {u: 0.0 for u in self.units}
        self.crossing = {u: np.full(n, np.nan) for u in self.units}
        self.post_crossing = {u: np.full(n, np.nan) for u in self.units}

    @staticmethod
    def _advance(times: np.ndarray, multipliers: np.ndarray, old: float, new: float, t: float):
        if new <= old:
            return
        lo = np.searchsorted(multipliers, old, side="left")
        hi = np.searchsorted(multipliers, new, side="left")
        times[lo:hi] = np.where(np.isnan(times[lo:hi]), t, times[lo:hi])

    def update(self, t: float, scores: Dict[str, float], t_atk: Optional[float] = None):
        for unit, s in scores.items():
            if unit not in self.peak:
                continue
            self._advance(self.crossing[unit], self.multipliers, self.peak[unit], s, t)
            self.peak[unit] = max(self.peak[unit], s)
            if t_atk is not None and t >= t_atk:
                self._advance(self.post_crossing[unit], self.multipliers, self.post_peak[unit], s, t)
                self.post_peak[unit] = max(self.post_peak[unit], s)


def flight_roc_flags(sweep: ScoreSweep, bounds: Dict[str, float], t_atk: Optional[float]) -> pd.DataFrame:
    """Per multiplier: did the flight alarm at all, and did a compromised instance alarm in time."""
    m = sweep.multipliers
    alarmed = np.zeros(len(m), dtype=bool)
    detected = np.zeros(len(m), dtype=bool)
    for unit in sweep.units:
        alarmed |= ~np.isnan(sweep.crossing[unit])
        if t_atk is not None and unit in bounds:
            c = sweep.post_crossing[unit]
            with np.errstate(invalid="ignore"):
                detected |= (c >= t_atk) & (c <= t_atk + bounds[unit])
    return pd.DataFrame({"multiplier": m, "alarmed": alarmed, "detected": detected})


def roc_points(attacked: Sequence[pd.DataFrame], clean: Sequence[pd.DataFrame]) -> pd.DataFrame:
    """TPR from attacked flights, FPR from the paired attack-free flights, per multiplier."""
    frames = list(attacked) or list(clean)
    if not frames:
        return pd.DataFrame(columns=["multiplier", "tpr", "fpr"])
    m = frames[0]["multiplier"].to_numpy()
    tpr = np.mean([f["detected"].to_numpy() for f in attacked], axis=0) if attacked else np.full(len(m), np.nan)
    fpr = np.mean([f["alarmed"].to_numpy() for f in clean], axis=0) if clean else np.full(len(m), np.nan)
    return pd.DataFrame({"multiplier": m, "tpr": tpr, "fpr": fpr})


def auc(points: pd.DataFrame) -> float:
    """Trapezoid-rule area under (fpr, tpr), closed with (0, 0) and (1, 1)."""
    pts = points[["fpr", "tpr"]].dropna().to_numpy(dtype=float)
    if len(pts) == 0:
        return float("nan")
    pts = np.vstack([[0.0, 0.0], pts, [1.0, 1.0]])
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]
    x, y = pts[:, 0], pts[:, 1]
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) * 0.5))


def rate(flags: Iterable[bool]) -> float:
    values = list(flags)
    return float(np.mean(values)) if values else float("nan")


def summarize_cases(outcomes: pd.DataFrame) -> pd.DataFrame:
    """TPR, FPR, TTD quantiles and recovery durations per case."""
    rows: List[Dict[str, object]] = []
    if outcomes.empty:
        return pd.DataFrame(columns=["case", "flights", "failed", "tpr", "fpr", "ttd_median", "ttd_p90",
                                     "recovery_median", "crashes", "divergences"])
    for case, group in outcomes.groupby("case", sort=False):
        ok = group[group["status"] != "failed"]
        attacked = ok[ok["attack"] != "none"]
        ttds = attacked.loc[attacked["detected"].astype(bool), "ttd"].dropna()
        rec = ok["recovery_duration"].dropna()
        rows.append({
            "case": case,
            "flights": len(group),
            "failed": int((group["status"] == "failed").sum()),
            "tpr": rate(attacked["detected"].astype(bool)) if len(attacked) else float("nan"),
            "fpr": rate(ok["alarmed"].astype(bool)) if len(ok) and (ok["attack"] == "none").all() else float("nan"),
            "ttd_median": float(ttds.median()) if len(ttds) else float("nan"),
            "ttd_p90": float(ttds.quantile(0.9)) if len(ttds) else float("nan"),
            "recovery_median": float(rec.median()) if len(rec) else float("nan"),
            "crashes": int((ok["terminal"] == "crash").sum()),
            "divergences": int((ok["terminal"] == "divergence").sum()),
        })
    return pd.DataFrame(rows)

