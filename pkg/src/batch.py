"""Batch harness: every mission x attack x variant case flown over the same seeds."""
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import pandas as pd

from .engine import fly
from .flightlog import unique_path, write_log
from .metrics import auc, roc_points, summarize_cases
from .report import render_report
from .scenario import ATTACK_FREE, MatrixConfig, ScenarioConfig

logger = logging.getLogger(__name__)

OUTCOME_COLUMNS = [
    "case", "mission", "attack", "variant", "seed", "status", "terminal", "t_end", "t_atk", "t_alarm",
    "alarmed", "detected", "tp", "fp", "tn", "fn", "ttd", "ttd_censored", "recovery_duration",
    "recovery_censored", "switches", "log", "error",
]


@dataclass
class BatchResult:
    outcomes: pd.DataFrame
    summary: pd.DataFrame
    roc: pd.DataFrame
    auc: pd.DataFrame


@dataclass(frozen=True)
class _Job:
    cfg: ScenarioConfig
    mission: str
    attack: str
    variant: str
    log_dir: Optional[str] = None


def _run_job(job: _Job) -> Tuple[Dict[str, Any], Optional[pd.DataFrame]]:
    base = {"case": job.cfg.name, "mission": job.mission, "attack": job.attack, "variant": job.variant,
            "seed": job.cfg.seed, "log": ""}
    try:
        result = fly(job.cfg, record=job.log_dir is not None)
    except Exception as exc:  # recorded as failed; the batch goes on
        logger.warning("flight %s seed %d failed: %s", job.cfg.name, job.cfg.seed, exc)
        return {**base, "status": "failed", "error": f"{type(exc).__name__}: {exc}"}, None
    row = {**result.outcome_row(), **base}
    if job.log_dir is not None and result.log is not None:
        stem = f"{job.mission}_{job.variant}_{job.attack}_s{job.cfg.seed}".replace("|", "-").replace("/", "of")
        row["log"] = str(write_log(result.log, job.log_dir, _safe(stem)))
    return row, result.roc


def _safe(stem: str) -> str:
    return "".join(c if c.isalnum() or c in "-_.^" else "_" for c in stem)


def _jobs(matrix: MatrixConfig, log_dir: Optional[Path]) -> List[_Job]:
    jobs = []
    for mission, attack, variant in matrix.cases():
        for seed in matrix.seed_list():
            cfg = matrix.scenario(mission, attack, variant, seed)
            jobs.append(_Job(cfg, mission, attack, variant.name, str(log_dir) if log_dir else None))
    return jobs


def run_batch(matrix: MatrixConfig, jobs: int = 1, log_dir=None) -> BatchResult:
    """Fly the whole matrix; flights are independent so they may run in worker processes."""
    work = _jobs(matrix, Path(log_dir) if log_dir else None)
    logger.info("batch %s: %d cases x %d seeds = %d flights", matrix.name, len(matrix.cases()),
                matrix.seeds, len(work))
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_job, work))
    else:
        results = []
        for i, job in enumerate(work, 1):
            results.append(_run_job(job))
            logger.info("batch %s: %d/%d flights done", matrix.name, i, len(work))

    outcomes = pd.DataFrame([r for r, _ in results], columns=OUTCOME_COLUMNS)
    roc, areas = _roc_tables(work, results)
    return BatchResult(outcomes, summarize_cases(outcomes), roc, areas)


def _roc_tables(work: List[_Job], results) -> Tuple[pd.DataFrame, pd.DataFrame]:
    flags: Dict[Tuple[str, str, str], List[pd.DataFrame]] = {}
    for job, (_, roc) in zip(work, results):
        if roc is not None:
            flags.setdefault((job.mission, job.variant, job.attack), []).append(roc)
    roc_frames, auc_rows = [], []
    for (mission, variant, attack), attacked in flags.items():
        if attack == ATTACK_FREE:
            continue
        clean = flags.get((mission, variant, ATTACK_FREE), [])
        points = roc_points(attacked, clean)
        points.insert(0, "case", f"{mission}|{attack}|{variant}")
        roc_frames.append(points)
        auc_rows.append({"case": f"{mission}|{attack}|{variant}", "mission": mission, "attack": attack,
                         "variant": variant, "auc": auc(points) if clean else float("nan")})
    roc = pd.concat(roc_frames, ignore_index=True) if roc_frames else pd.DataFrame(
        columns=["case", "multiplier", "tpr", "fpr"])
    areas = pd.DataFrame(auc_rows, columns=["case", "mission", "attack", "variant", "auc"])
    return roc, areas


def write_batch(result: BatchResult, out_dir, name: str = "batch") -> Dict[str, Path]:
    """Write the outcome index, per-case summary, ROC points, AUC table and text report; never overwrites."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "outcomes": unique_path(out / f"{name}_outcomes.csv"),
        "summary": unique_path(out / f"{name}_summary.csv"),
        "roc": unique_path(out / f"{name}_roc.csv"),
        "auc": unique_path(out / f"{name}_auc.csv"),
        "report": unique_path(out / f"{name}_report.txt"),
    }
    result.outcomes.to_csv(paths["outcomes"], index=False, float_format="%.9g")
    result.summary.to_csv(paths["summary"], index=False, float_format="%.9g")
    result.roc.to_csv(paths["roc"], index=False, float_format="%.9g")
    result.auc.to_csv(paths["auc"], index=False, float_format="%.9g")
    paths["report"].write_text(render_report(result.summary, result.auc, title=name))
    logger.info("wrote batch outputs to %s", out)
    return paths
