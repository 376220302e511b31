"""Flight logs: one CSV row per control tick plus a JSON sidecar with the run metadata."""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from .config import LOG_COLUMN_SYNONYMS

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.9g"


class FlightRecorder:
    """Column-wise row collector; keys missing from a row are filled with NaN."""

    def __init__(self):
        self.columns: Dict[str, List[float]] = {}
        self.rows = 0

    def add(self, row: Dict[str, Any]):
        for key, value in row.items():
            col = self.columns.get(key)
            if col is None:
                col = [np.nan] * self.rows
                self.columns[key] = col
            col.append(value)
        self.rows += 1
        for col in self.columns.values():
            if len(col) < self.rows:
                col.append(np.nan)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.columns)


@dataclass
class FlightLog:
    frame: pd.DataFrame
    meta: Dict[str, Any] = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return self.frame[name].to_numpy(dtype=float)

    def columns_like(self, prefix: str) -> List[str]:
        return [c for c in self.frame.columns if c.startswith(prefix)]

    def alarm_times(self) -> Dict[str, float]:
        """First tick each instance's alarm flag is set."""
        t = self.column("t")
        out = {}
        for col in self.columns_like("alarm_"):
            hits = np.flatnonzero(self.frame[col].to_numpy(dtype=float) > 0)
            if hits.size:
                out[col[len("alarm_"):]] = float(t[hits[0]])
        return out


def _normalize_columns(df: pd.DataFrame, synonyms: Dict[str, List[str]]) -> pd.DataFrame:
    lower_map = {c.lower(): c for c in df.columns}
    rename = {}
    for std_col, syns in synonyms.items():
        if std_col in df.columns:
            continue
        for s in syns:
            if s.lower() in lower_map:
                rename[lower_map[s.lower()]] = std_col
                break
    return df.rename(columns=rename).copy()


def unique_path(path: Path) -> Path:
    """Never overwrite an earlier run: append -1, -2, ... to the stem."""
    if not path.exists():
        return path
    n = 1
    while True:
        candidate = path.with_name(f"{path.stem}-{n}{path.suffix}")
        if not candidate.exists():
            return candidate
        n += 1


def write_log(log: FlightLog, out_dir, stem: str) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = unique_path(out_dir / f"{stem}.csv")
    log.frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    path.with_suffix(".json").write_text(json.dumps(log.meta, indent=2, sort_keys=True, default=_jsonable))
    logger.info("wrote flight log %s (%d rows)", path, len(log.frame))
    return path


def load_csv(path) -> pd.DataFrame:
    return pd.read_csv(path)


def load_log(path) -> FlightLog:
    """Read a flight log; accepts alternate spellings of the time/battery/command columns."""
    path = Path(path)
    df = _normalize_columns(load_csv(path), LOG_COLUMN_SYNONYMS)
    if "t" not in df.columns:
        raise ValueError(f"{path}: flight log has no time column")
    meta_path = path.with_suffix(".json")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    return FlightLog(df, meta)


def _jsonable(value: Any) -> Optional[Any]:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if hasattr(value, "model_dump"):
        return value.model_dump()
    return str(value)
