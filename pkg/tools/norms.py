"""Norm evaluation of stored fields from the command line."""

from __future__ import annotations

import logging
import math
from pathlib import Path

from src.components.grid import SampledField, load_fields
from src.components.spaces import norm_report
from src.errors import ConfigurationError
from src.schema import parse_value

logger = logging.getLogger(__name__)


def parse_norm_spec(spec: str) -> list[tuple[str, dict]]:
    """``"morrey:q=2,a=1;holder:gamma=0.5"`` -> [("morrey", {"q": 2, "a": 1}), ("holder", {"gamma": 0.5})]."""
    specs = []
    for chunk in spec.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        name, _, raw = chunk.partition(":")
        params = {}
        for item in filter(None, (p.strip() for p in raw.split(","))):
            key, sep, value = item.partition("=")
            if not sep or not key.strip():
                raise ConfigurationError(f"norm parameter {item!r} must look like key=value", "spec")
            params[key.strip()] = parse_value(value.strip())
        specs.append((name.strip(), params))
    if not specs:
        raise ConfigurationError("norm spec is empty", "spec")
    return specs


def field_norms(path: Path, spec: str) -> list[dict]:
    """One record per (stored field, norm) of a levylab field file."""
    specs = parse_norm_spec(spec)
    grid, arrays, times, components = load_fields(path)
    if components != 1:
        raise ConfigurationError(f"{path} holds {components}-component fields; norms take scalar fields", "field")
    records = []
    for index, (values, t) in enumerate(zip(arrays, times)):
        time = None if math.isnan(t) else t
        for record in norm_report(SampledField(grid, values, time), specs):
            records.append({"index": index, "time": time, **record})
    logger.info("Evaluated %d norm(s) on %d field(s) from %s", len(specs), len(arrays), path)
    return records
