"""Parameter sweeps: one scenario per value on a bounded dask thread pool."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional, Sequence

import dask
import numpy as np
import pandas as pd

from src.components.spaces import lp_array
from src.components.tables import write_table
from src.config import worker_count
from src.errors import ConfigurationError
from src.schema import ScenarioConfig, parse_value, scalar_at, with_value
from tools.run import RunReport, run_scenario

logger = logging.getLogger(__name__)


@dataclass
class SweepReport:
    axis: str
    table: pd.DataFrame
    reports: list[RunReport]
    path: Path

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports)


def parse_values(raw: str) -> list[Any]:
    """Comma-separated sweep values, each parsed as a YAML scalar."""
    values = [parse_value(item.strip()) for item in raw.split(",") if item.strip()]
    if not values:
        raise ConfigurationError("sweep needs at least one value", "values")
    return values


def _label(value: Any) -> str:
    if isinstance(value, (list, tuple)):
        return "_".join(_label(v) for v in value)
    return f"{value:g}" if isinstance(value, float) else str(value)


def _row(axis: str, value: Any, report: RunReport) -> dict:
    row = {axis: _label(value), "run": report.name, "passed": report.passed}
    row.update(report.metrics)
    margins = [c.worst_margin for c in report.certificates if len(c.samples)]
    row["worst_margin"] = min(margins) if margins else np.nan
    for cert in report.certificates:
        row[f"verdict:{cert.name}"] = "pass" if cert.passed else "fail"
    return row


def _distances(reports: Sequence[RunReport]) -> Optional[pd.DataFrame]:
    finals = [r.final for r in reports]
    if any(f is None for f in finals) or len(finals) < 2:
        return None
    if any(f.grid != finals[0].grid for f in finals):
        return None
    last = finals[-1]
    to_last = [lp_array(f.values - last.values, 2.0, last.grid) for f in finals]
    to_next = [lp_array(a.values - b.values, 2.0, a.grid) for a, b in zip(finals[:-1], finals[1:])] + [np.nan]
    return pd.DataFrame({"distance_to_last": to_last, "distance_to_next": to_next})


def sweep(
    config: ScenarioConfig,
    axis: str,
    values: Sequence[Any],
    workers: Optional[int] = None,
    output_root: Optional[Path] = None,
) -> SweepReport:
    """Run ``config`` once per value of ``axis`` and write ``<name>_sweep.csv``."""
    if not values:
        raise ConfigurationError("sweep needs at least one value", "values")
    scalar_at(config, axis)
    root = Path(output_root if output_root is not None else config.output_dir)
    leaf = axis.split(".")[-1]
    configs = [with_value(config, axis, v, name=f"{config.name}-{leaf}={_label(v)}") for v in values]
    names = [c.name for c in configs]
    if len(set(names)) != len(names):
        raise ConfigurationError(f"sweep values collide on run names {names}", "values")
    workers = worker_count(workers)
    logger.info("Sweeping %s over %d value(s) with %d worker(s)", axis, len(values), workers)
    tasks = [dask.delayed(run_scenario)(c, root) for c in configs]
    reports = list(dask.compute(*tasks, scheduler="threads", num_workers=workers))
    table = pd.DataFrame([_row(axis, v, r) for v, r in zip(values, reports)])
    distances = _distances(reports)
    if distances is not None:
        table = pd.concat([table, distances], axis=1)
    path = write_table(table, root / f"{config.name}_sweep.csv", description=f"sweep over {axis}")
    logger.info("Sweep table written to %s", path)
    return SweepReport(axis, table, reports, path)
