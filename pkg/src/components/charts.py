"""Altair chart specifications for run artifacts.

Charts are written as Vega-Lite JSON next to the CSV holding their data;
nothing here renders.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Callable, Optional

import altair as alt
import numpy as np
import pandas as pd

from src.components.tables import write_table
from src.errors import ConfigurationError

logger = logging.getLogger(__name__)

NORM_COLUMNS = ("l1", "l2", "l4", "linf")
BOUND_QUANTITIES = {"moment": "concentration", "sup": "height", "l1": "l1"}


def _title(title: str, subtitle: str) -> dict:
    return {
        "text": title,
        "subtitle": [subtitle] if subtitle else [],
        "color": "black",
        "subtitleColor": "gray",
        "fontSize": 16,
        "subtitleFontSize": 12,
        "anchor": "start",
    }


def _require(df: pd.DataFrame, columns, chart: str) -> None:
    missing = [c for c in columns if c not in df.columns]
    if missing:
        raise ConfigurationError(f"{chart} chart needs column(s) {missing}")


## Norm history
def create_norm_history_chart(diagnostics: pd.DataFrame, title: str = "Norm history", subtitle: str = "") -> alt.Chart:
    """L^p norms of the solution against time, one line per exponent, with a hover rule."""
    present = [c for c in NORM_COLUMNS if c in diagnostics.columns]
    _require(diagnostics, ["time"], "norm history")
    if not present:
        raise ConfigurationError("norm history chart needs at least one norm column")
    long = diagnostics[["time", *present]].melt(id_vars="time", var_name="norm", value_name="value")

    nearest = alt.selection_point(nearest=True, on="mouseover", fields=["time"], empty=False, clear="mouseout")
    lines = alt.Chart(long).mark_line(strokeWidth=1.5).encode(
        x=alt.X("time:Q", title="t"),
        y=alt.Y("value:Q", title=None, scale=alt.Scale(zero=False)),
        color=alt.Color("norm:N", sort=list(present), legend=alt.Legend(title=None, orient="top")),
    )
    selectors = alt.Chart(long).mark_rule(opacity=0).encode(x="time:Q").add_params(nearest)
    rules = alt.Chart(long).mark_rule(color="gray", opacity=0.5).encode(x="time:Q").transform_filter(nearest)
    points = lines.mark_point(filled=True, size=40).encode(
        opacity=alt.condition(nearest, alt.value(1), alt.value(0)),
        tooltip=[alt.Tooltip("time:Q", format=".4g"), alt.Tooltip("norm:N"), alt.Tooltip("value:Q", format=".6g")],
    )
    return alt.layer(lines, selectors, rules, points).properties(
        height=300, width="container", title=_title(title, subtitle)
    ).configure_view(stroke=None)


## Contraction constant
def create_contraction_chart(
    windows: pd.DataFrame, target: float = 0.5, title: str = "Contraction constant", subtitle: str = ""
) -> alt.Chart:
    """C0(T') against the window length T', with the contraction target as a rule."""
    _require(windows, ["length", "contraction"], "contraction")
    base = alt.Chart(windows).encode(
        x=alt.X("length:Q", title="T'", scale=alt.Scale(type="log")),
        y=alt.Y("contraction:Q", title="C0", scale=alt.Scale(type="log")),
    )
    curve = base.mark_line(color="black") + base.mark_point(color="black", filled=True, size=30)
    limit = alt.Chart(pd.DataFrame({"target": [target]})).mark_rule(strokeDash=[4, 4], color="#FB9A99").encode(
        y="target:Q"
    )
    return alt.layer(curve, limit).properties(height=300, width="container", title=_title(title, subtitle)).configure_view(
        stroke=None
    )


## Pairing decay
def create_pairing_decay_chart(decay: pd.DataFrame, slope: Optional[float] = None, title: str = "Pairing decay", subtitle: str = "") -> alt.Chart:
    """Largest molecule pairing per scale on log-log axes, with the fitted power law."""
    _require(decay, ["r", "max_pairing"], "pairing decay")
    df = decay[decay["max_pairing"] > 0].copy()
    points = alt.Chart(df).mark_point(filled=True, size=60, color="black").encode(
        x=alt.X("r:Q", title="r", scale=alt.Scale(type="log")),
        y=alt.Y("max_pairing:Q", title="max |<theta, psi_r>|", scale=alt.Scale(type="log")),
        tooltip=[alt.Tooltip("r:Q", format=".4g"), alt.Tooltip("max_pairing:Q", format=".4g")],
    )
    layers = [points]
    if slope is not None and len(df) >= 2:
        logs = np.log(df["r"].to_numpy())
        intercept = float(np.mean(np.log(df["max_pairing"].to_numpy())) - slope * np.mean(logs))
        df["fit"] = np.exp(intercept + slope * logs)
        layers.append(
            alt.Chart(df).mark_line(color="#A6CEE3", strokeWidth=2).encode(x="r:Q", y="fit:Q")
        )
    return alt.layer(*layers).properties(height=300, width="container", title=_title(title, subtitle)).configure_view(
        stroke=None
    )


## Molecule trace bounds
def create_trace_bounds_chart(trace: pd.DataFrame, title: str = "Molecule bounds", subtitle: str = "") -> alt.Chart:
    """Measured molecule quantities against their iterated bounds over the schedule."""
    _require(trace, ["s"], "trace bounds")
    rows = []
    for column, quantity in BOUND_QUANTITIES.items():
        bound = f"{column}_bound"
        if column in trace.columns and bound in trace.columns:
            rows.append(pd.DataFrame({"s": trace["s"], "quantity": quantity, "measured": trace[column], "bound": trace[bound]}))
    if not rows:
        raise ConfigurationError("trace bounds chart found no measured/bound column pair")
    long = pd.concat(rows, ignore_index=True)
    base = alt.Chart(long).encode(x=alt.X("s:Q", title="s"))
    measured = base.mark_line(color="black").encode(y=alt.Y("measured:Q", title=None, scale=alt.Scale(type="log")))
    bound = base.mark_line(strokeDash=[4, 4], color="gray").encode(y="bound:Q")
    return alt.layer(measured, bound).properties(height=200, width=260).facet(
        column=alt.Column("quantity:N", title=None)
    ).properties(title=_title(title, subtitle)).configure_view(stroke=None)


def save_chart(chart: alt.TopLevelMixin, path: Path) -> Path:
    """Write the Vega-Lite specification as JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(chart.to_json(indent=2))
    logger.debug("Wrote chart %s", path)
    return path


def emit_chart(
    df: pd.DataFrame,
    build: Callable[..., alt.TopLevelMixin],
    directory: Path,
    stem: str,
    description: str = "",
    charts_dir: Optional[Path] = None,
    **kwargs,
) -> dict:
    """CSV of ``df`` plus ``<stem>.vl.json`` built from it, in ``charts_dir`` or alongside."""
    directory = Path(directory)
    charts_dir = directory if charts_dir is None else Path(charts_dir)
    table = write_table(df, directory / f"{stem}.csv", description=description)
    spec = save_chart(build(df, **kwargs), charts_dir / f"{stem}.vl.json")
    return {"table": str(table), "chart": str(spec)}
