import json

import pytest

from src.config import REPORT_FILENAME, TIMING_FILENAME
from src.errors import ConfigurationError
from src.schema import ScenarioConfig
from tools.kernel import check_kernel, kernel_only
from tools.run import run_scenario
from tools.sweep import parse_values, sweep

KERNEL = {"alpha": 0.5, "delta": 0.3, "profile": "two-exponent"}
SMALL_SOLVE = {
    "name": "small",
    "seed": 11,
    "grid": {"points_per_dim": 16},
    "kernel": KERNEL,
    "drift": {"kind": "zero"},
    "theta0": {"kind": "random", "max_mode": 2, "positive": True},
    "solver": {"dt": 0.05, "horizon": 0.2, "epsilon_visc": 0.01},
    "verifiers": ["max_principle", "positivity", "mass_conservation"],
}


def _config(**updates) -> ScenarioConfig:
    return ScenarioConfig.model_validate({**SMALL_SOLVE, **updates})


def test_kernel_only_run_has_one_certificate(tmp_path):
    config = ScenarioConfig(name="k", kernel=KERNEL, verifiers=["symbol_bounds"])
    report = run_scenario(config, tmp_path)
    assert [c.name for c in report.certificates] == ["symbol_bounds"]
    assert report.passed
    assert [s.name for s in report.stages] == ["kernel"]
    assert sorted(p.name for p in tmp_path.iterdir()) == ["k"]
    written = json.loads((tmp_path / "k" / REPORT_FILENAME).read_text())
    assert written["certificates"][0]["verdict"] == "pass"
    assert (tmp_path / "k" / "certificates" / "symbol_bounds.json").exists()
    assert (tmp_path / "k" / "tables" / "symbol_profile.csv").exists()


def test_solve_run_writes_artifacts(tmp_path):
    report = run_scenario(_config(), tmp_path)
    assert report.passed
    assert {c.name for c in report.certificates} == {"max_principle", "positivity", "mass_conservation"}
    run_dir = tmp_path / "small"
    for rel in report.artifacts.values():
        assert (run_dir / rel).exists(), rel
    assert (run_dir / "charts" / "norm_history.vl.json").exists()
    assert (run_dir / "fields" / "trajectory.bin").exists()
    timing = json.loads((run_dir / TIMING_FILENAME).read_text())
    assert {row["stage"] for row in timing["stages"]} == {"kernel", "problem", "solve", "verifiers"}
    assert report.metrics["final_l2"] <= report.norms["l2"].iloc[0] * (1 + 1e-6)


def test_same_seed_gives_identical_reports(tmp_path):
    first = run_scenario(_config(), tmp_path / "a")
    second = run_scenario(_config(), tmp_path / "b")
    assert (first.directory / REPORT_FILENAME).read_bytes() == (second.directory / REPORT_FILENAME).read_bytes()
    other = run_scenario(_config(seed=12), tmp_path / "c")
    assert (other.directory / REPORT_FILENAME).read_bytes() != (first.directory / REPORT_FILENAME).read_bytes()


def test_rerun_replaces_previous_output(tmp_path):
    run_scenario(_config(), tmp_path)
    (tmp_path / "small" / "stale.txt").write_text("old")
    run_scenario(_config(), tmp_path)
    assert not (tmp_path / "small" / "stale.txt").exists()
    assert sorted(p.name for p in tmp_path.iterdir()) == ["small"]


def test_precondition_failures_are_recorded_as_skips(tmp_path):
    config = _config(theta0={"kind": "random", "max_mode": 2})
    report = run_scenario(config, tmp_path)
    assert "positivity" in report.skipped
    assert "PreconditionError" in report.skipped["positivity"]
    assert not report.passed
    assert report.certificate("max_principle").passed


def test_failed_stage_is_recorded_and_later_stages_run(tmp_path):
    config = _config(holder_probe={"enabled": True})
    report = run_scenario(config, tmp_path)
    stages = {s.name: s for s in report.stages}
    assert stages["holder_probe"].status == "failed"
    assert "UnderResolvedError" in stages["holder_probe"].reason
    assert stages["verifiers"].status == "ok"
    assert report.holder is None
    assert not report.passed


@pytest.mark.slow
def test_full_pipeline_reports_trace_and_exponents(tmp_path):
    config = ScenarioConfig.model_validate({
        "name": "pipeline",
        "seed": 2,
        "grid": {"points_per_dim": 64, "side_length": 2.0},
        "kernel": {"alpha": 0.8, "delta": 0.6, "cbar1": 0.05, "cbar2": 0.05},
        "theta0": {"kind": "random", "max_mode": 2},
        "solver": {"dt": 0.01, "horizon": 0.2, "epsilon_visc": 0.0},
        "verifiers": ["pairing_chain"],
        "holder_probe": {"enabled": True, "profile": "concentric", "pairing_radii": [0.25]},
        "molecule_lab": {"enabled": True, "radii": [0.1], "center": [1.0, 1.0], "T0": 0.6},
    })
    report = run_scenario(config, tmp_path)
    assert [t["r"] for t in report.traces] == [0.1]
    assert all(report.traces[0]["verdicts"].values())
    assert {"constants", "molecule", "molecule_trace", "l1_control", "concentration", "pairing_chain"} <= {c.name for c in report.certificates}
    assert report.certificate("molecule_trace").passed
    assert report.certificate("concentration").passed
    assert report.certificate("l1_control").passed
    assert report.holder is not None
    assert report.holder["verdict"] in {"agree", "disagree", "noisy", "flat"}
    assert report.holder["regime_bound"] == pytest.approx(0.6)
    assert (tmp_path / "pipeline" / "tables" / "holder.json").exists()


def test_check_kernel_strips_solve_stages(tmp_path):
    config = _config(molecule_lab={"enabled": True})
    reduced = kernel_only(config)
    assert reduced.verifiers == ["nondegeneracy", "symbol_bounds"]
    assert not reduced.needs_solve
    report = check_kernel(config, tmp_path)
    assert report.name == "small-kernel"
    assert {c.name for c in report.certificates} == {"nondegeneracy", "symbol_bounds"}
    with pytest.raises(ConfigurationError):
        kernel_only(ScenarioConfig())


def test_sweep_over_viscosity(tmp_path):
    config = _config(verifiers=["max_principle"])
    result = sweep(config, "solver.epsilon_visc", [0.04, 0.02, 0.01], workers=2, output_root=tmp_path)
    assert result.table["solver.epsilon_visc"].tolist() == ["0.04", "0.02", "0.01"]
    assert result.table["distance_to_last"].iloc[-1] == 0.0
    assert result.table["distance_to_last"].iloc[0] > 0.0
    assert result.passed
    assert (tmp_path / "small_sweep.csv").exists()
    assert (tmp_path / "small-epsilon_visc=0.02" / "report.json").exists()


def test_sweep_guards(tmp_path):
    config = _config()
    with pytest.raises(ConfigurationError):
        sweep(config, "solver.epsilon_visc", [], output_root=tmp_path)
    with pytest.raises(ConfigurationError):
        sweep(config, "solver", [1], output_root=tmp_path)
    with pytest.raises(ConfigurationError):
        parse_values(" , ")
    assert parse_values("0.1, 1e-2,3") == [0.1, 0.01, 3]
