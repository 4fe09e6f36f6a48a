"""Kernel-only checks: symbol table, non-degeneracy and symbol bounds."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional

from src.errors import ConfigurationError
from src.schema import KERNEL_VERIFIERS, ScenarioConfig, validate_scenario
from tools.run import RunReport, run_scenario

logger = logging.getLogger(__name__)


def kernel_only(config: ScenarioConfig) -> ScenarioConfig:
    """Copy of ``config`` reduced to its kernel section and kernel verifiers."""
    if config.kernel is None:
        raise ConfigurationError("check-kernel needs a kernel section", "kernel")
    tree = config.model_dump()
    tree.update({
        "name": f"{config.name}-kernel",
        "verifiers": list(KERNEL_VERIFIERS),
        "solver": None,
    })
    tree["molecule_lab"]["enabled"] = False
    tree["holder_probe"]["enabled"] = False
    return validate_scenario(tree)


def check_kernel(config: ScenarioConfig, output_root: Optional[Path] = None) -> RunReport:
    report = run_scenario(kernel_only(config), output_root)
    logger.info("Kernel %s: %s", config.kernel.build(config.grid.n).identifier, "pass" if report.passed else "fail")
    return report
