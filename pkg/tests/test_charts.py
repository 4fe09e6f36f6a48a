import json

import numpy as np
import pandas as pd
import pytest

from src.components.charts import (
    create_contraction_chart,
    create_norm_history_chart,
    create_pairing_decay_chart,
    create_trace_bounds_chart,
    emit_chart,
)
from src.errors import ConfigurationError


def test_norm_history_layers_every_norm():
    diagnostics = pd.DataFrame({"time": [0.0, 0.1, 0.2], "l2": [1.0, 0.9, 0.8], "linf": [1.0, 0.95, 0.9], "mass": 0.0})
    spec = create_norm_history_chart(diagnostics, subtitle="stable alpha=0.5").to_dict()
    assert len(spec["layer"]) == 4
    assert spec["title"]["subtitle"] == ["stable alpha=0.5"]


def test_norm_history_needs_a_norm():
    with pytest.raises(ConfigurationError):
        create_norm_history_chart(pd.DataFrame({"time": [0.0], "mass": [1.0]}))


def test_contraction_chart_marks_target():
    windows = pd.DataFrame({"length": [0.01, 0.02, 0.04], "contraction": [0.1, 0.2, 0.4]})
    spec = create_contraction_chart(windows, target=0.5).to_dict()
    assert "layer" in spec


def test_pairing_decay_adds_fit_line():
    r = np.array([0.125, 0.0625, 0.03125])
    decay = pd.DataFrame({"r": r, "max_pairing": r**0.8})
    with_fit = create_pairing_decay_chart(decay, slope=0.8).to_dict()
    without = create_pairing_decay_chart(decay).to_dict()
    assert len(with_fit["layer"]) == 2
    assert len(without["layer"]) == 1


def test_trace_bounds_facets_quantities(tmp_path):
    trace = pd.DataFrame({
        "s": [0.0, 0.1],
        "moment": [0.1, 0.1],
        "moment_bound": [0.5, 0.6],
        "sup": [1.0, 0.5],
        "sup_bound": [2.0, 2.5],
    })
    paths = emit_chart(trace, create_trace_bounds_chart, tmp_path, "trace")
    spec = json.loads((tmp_path / "trace.vl.json").read_text())
    assert "facet" in spec
    assert paths["table"].endswith("trace.csv")
    with pytest.raises(ConfigurationError):
        create_trace_bounds_chart(pd.DataFrame({"s": [0.0]}))
