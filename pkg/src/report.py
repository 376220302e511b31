"""
Plain-text experiment reports built from outcome tables.
"""
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import pandas as pd

from .metrics import summarize_cases


@dataclass
class ReportContext:
    """Numbers and findings behind one report"""

    title: str = "report"
    total_flights: int = 0
    failed_flights: int = 0
    summary: pd.DataFrame = field(default_factory=pd.DataFrame)
    auc: pd.DataFrame = field(default_factory=pd.DataFrame)
    key_findings: List[str] = field(default_factory=list)


def _fmt(value, pct: bool = False) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "-"
    if pct:
        return f"{100.0 * value:.1f}%"
    return f"{value:.3f}" if isinstance(value, float) else str(value)


class ReportBuilder:
    """Collects the summary tables and derives the headline findings"""

    def __init__(self, summary: pd.DataFrame, auc: Optional[pd.DataFrame] = None, title: str = "report"):
        self.summary = summary
        self.auc = auc if auc is not None else pd.DataFrame(columns=["case", "auc"])
        self.title = title

    def build(self) -> ReportContext:
        ctx = ReportContext(title=self.title, summary=self.summary, auc=self.auc)
        if not self.summary.empty:
            ctx.total_flights = int(self.summary["flights"].sum())
            ctx.failed_flights = int(self.summary["failed"].sum())
        ctx.key_findings = self._extract_key_findings()
        return ctx

    def _extract_key_findings(self) -> List[str]:
        findings = []
        s = self.summary
        if s.empty:
            return findings
        crashed = s[s["crashes"] > 0]
        for _, row in crashed.iterrows():
            findings.append(f"{row['case']}: {int(row['crashes'])} of {int(row['flights'])} flights crashed")
        missed = s[s["tpr"].notna() & (s["tpr"] < 1.0)]
        for _, row in missed.iterrows():
            findings.append(f"{row['case']}: attack missed in {_fmt(1.0 - row['tpr'], pct=True)} of flights")
        noisy = s[s["fpr"].notna() & (s["fpr"] > 0.05)]
        for _, row in noisy.iterrows():
            findings.append(f"{row['case']}: false alarms in {_fmt(row['fpr'], pct=True)} of attack-free flights")
        return findings


def render_report(summary: pd.DataFrame, auc: Optional[pd.DataFrame] = None, title: str = "report") -> str:
    ctx = ReportBuilder(summary, auc, title).build()
    lines = [f"# {ctx.title}", ""]
    if ctx.summary.empty:
        lines.append("no flights")
        return "\n".join(lines) + "\n"
    lines.append(f"flights: {ctx.total_flights} ({ctx.failed_flights} failed)")
    lines.append("")
    header = f"{'case':<48} {'n':>4} {'TPR':>7} {'FPR':>7} {'TTD50':>8} {'TTD90':>8} {'rec50':>8} {'crash':>5} {'div':>4}"
    lines.append(header)
    lines.append("-" * len(header))
    for _, row in ctx.summary.iterrows():
        lines.append(
            f"{str(row['case'])[:48]:<48} {int(row['flights']):>4} {_fmt(row['tpr'], True):>7} "
            f"{_fmt(row['fpr'], True):>7} {_fmt(row['ttd_median']):>8} {_fmt(row['ttd_p90']):>8} "
            f"{_fmt(row['recovery_median']):>8} {int(row['crashes']):>5} {int(row['divergences']):>4}"
        )
    if not ctx.auc.empty:
        lines.extend(["", "AUC"])
        for _, row in ctx.auc.iterrows():
            lines.append(f"  {row['case']}: {_fmt(row['auc'])}")
    if ctx.key_findings:
        lines.extend(["", "findings"])
        lines.extend(f"  - {f}" for f in ctx.key_findings)
    return "\n".join(lines) + "\n"


def load_outcomes(paths: Sequence) -> pd.DataFrame:
    frames = [pd.read_csv(p) for p in paths]
    return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()


def sibling_auc(paths: Sequence) -> pd.DataFrame:
    """AUC tables written next to outcome files by the batch harness, if any."""
    frames = []
    for p in paths:
        p = Path(p)
        candidate = p.with_name(p.name.replace("_outcomes", "_auc"))
        if candidate != p and candidate.exists():
            frames.append(pd.read_csv(candidate))
    return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=["case", "auc"])


def report_from_files(paths: Sequence, title: str = "report") -> str:
    outcomes = load_outcomes(paths)
    if outcomes.empty:
        return render_report(pd.DataFrame(), None, title)
    return render_report(summarize_cases(outcomes), sibling_auc(paths), title)


def case_table(outcomes: pd.DataFrame) -> Dict[str, pd.DataFrame]:
    return {case: group for case, group in outcomes.groupby("case", sort=False)}
