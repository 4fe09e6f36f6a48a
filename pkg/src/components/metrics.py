"""Run-level verdicts: one row per certificate, plus the console summary."""

from __future__ import annotations

import logging
from typing import Iterable, Mapping, Optional

import pandas as pd

from src.components.tables import create_certificate_table
from src.components.verifiers import Certificate

logger = logging.getLogger(__name__)

VERDICT_COLUMNS = ["certificate", "verdict", "samples", "failed_samples", "worst_margin", "tolerance"]


def create_verdict_table(certificates: Iterable[Certificate]) -> pd.DataFrame:
    """Certificate table with failing-sample counts, failures first, then by worst margin."""
    certificates = list(certificates)
    table = create_certificate_table(certificates)
    table["failed_samples"] = [
        int((c.samples["margin"] < -c.tolerance).sum()) if len(c.samples) else 0 for c in certificates
    ]
    table["_failed"] = table["verdict"] != "pass"
    table = table.sort_values(["_failed", "worst_margin"], ascending=[False, True], na_position="last", kind="stable")
    return table.drop(columns="_failed").reset_index(drop=True)[VERDICT_COLUMNS]


def timing_table(timings: Mapping[str, float]) -> pd.DataFrame:
    table = pd.DataFrame({"stage": list(timings), "seconds": [float(v) for v in timings.values()]})
    total = table["seconds"].sum()
    table["share"] = table["seconds"] / total if total > 0 else 0.0
    return table


def format_margin(value: float) -> str:
    if pd.isna(value):
        return "n/a"
    return f"{value:+.3g}"


def summary_lines(table: pd.DataFrame, timings: Optional[Mapping[str, float]] = None) -> list[str]:
    """Plain text card per certificate: name, verdict and worst margin."""
    lines = []
    width = max((len(name) for name in table["certificate"]), default=0)
    for row in table.itertuples(index=False):
        detail = f"margin {format_margin(row.worst_margin)}"
        if row.failed_samples:
            detail += f", {row.failed_samples}/{row.samples} samples failing"
        lines.append(f"{row.certificate:<{width}}  {row.verdict.upper():<4}  {detail}")
    passed = int((table["verdict"] == "pass").sum())
    lines.append(f"{passed}/{len(table)} certificates pass")
    if timings:
        lines.append(f"wall clock {sum(timings.values()):.2f}s")
    return lines
