"""Tabular summaries: sweep ratios, certificate tables and CSV emission."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
from scipy.stats import linregress

logger = logging.getLogger(__name__)


@dataclass
class ScalingReport:
    """Measured quantity against a shape function across a sweep."""

    name: str
    table: pd.DataFrame
    fitted_constant: float
    variation: float
    slope: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "fitted_constant": self.fitted_constant,
            "variation": self.variation,
            "slope": self.slope,
            "sweep": self.table.to_dict(orient="records"),
        }


def scaling_report(name: str, table: pd.DataFrame, x: str) -> ScalingReport:
    """Attach lhs/rhs_shape ratios, their max/min spread and the log-log slope of lhs against ``x``."""
    table = table.copy()
    table["ratio"] = np.where(table["rhs_shape"] > 0, table["lhs"] / table["rhs_shape"], np.inf)
    positive = table[(table["ratio"] > 0) & np.isfinite(table["ratio"])]
    variation = float(positive["ratio"].max() / positive["ratio"].min()) if len(positive) else float("nan")
    slope = None
    ok = table[table["lhs"] > 0]
    if len(ok) >= 2:
        slope = float(linregress(np.log(ok[x].astype(float)), np.log(ok["lhs"].astype(float))).slope)
    fitted = float(table["ratio"].max()) if len(table) else float("nan")
    return ScalingReport(name, table, fitted, variation, slope)


def write_table(df: pd.DataFrame, path: Path, description: str = "", units: Optional[dict] = None) -> Path:
    """Write ``df`` as CSV plus a ``<name>.columns.json`` manifest describing each column."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format="%.12g")
    units = units or {}
    manifest = {
        "file": path.name,
        "description": description,
        "rows": int(len(df)),
        "columns": [{"name": str(c), "dtype": str(df[c].dtype), "unit": units.get(c, "")} for c in df.columns],
    }
    manifest_path = path.with_suffix(".columns.json")
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    logger.debug("Wrote table %s (%d rows)", path, len(df))
    return path


def create_certificate_table(certificates) -> pd.DataFrame:
    """One row per certificate with its verdict and worst margin."""
    rows = []
    for cert in certificates:
        margins = cert.samples["margin"] if len(cert.samples) else pd.Series(dtype=float)
        rows.append({
            "certificate": cert.name,
            "verdict": "pass" if cert.passed else "fail",
            "samples": int(len(cert.samples)),
            "worst_margin": float(margins.min()) if len(margins) else float("nan"),
            "tolerance": cert.tolerance,
        })
    return pd.DataFrame(rows, columns=["certificate", "verdict", "samples", "worst_margin", "tolerance"])
