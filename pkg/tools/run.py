"""Scenario runs: solve, verifiers, molecule lab and Holder probe.

Every run is staged in a temporary directory next to its destination and
renamed into place once all artifacts are written.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import shutil
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import pandas as pd

from src.components.charts import (
    create_contraction_chart,
    create_norm_history_chart,
    create_pairing_decay_chart,
    create_trace_bounds_chart,
    emit_chart,
    save_chart,
)
from src.components.grid import SampledField
from src.components.holder import (
    big_molecule_bound,
    build_family,
    estimate_holder_exponent,
    export_holder_report,
    verify_pairing_chain,
)
from src.components.levy import save_symbol_table, tabulate_symbol
from src.components.metrics import create_verdict_table, timing_table
from src.components.molecules import (
    RegimeParams,
    certify_concentration,
    certify_l1_control,
    check_molecule,
    classify_regime,
    compute_constants,
    export_trace,
    fit_concentration_control,
    fit_l1_control,
    make_molecule,
    schedule_iterations,
    track_deformation,
)
from src.components.solver import (
    ViscousProblem,
    backward_dual_solve,
    continuous_dependence,
    export_trajectory,
    solve,
)
from src.components.tables import write_table
from src.components.verifiers import (
    Certificate,
    calibrate_besov_constants,
    combine_certificates,
    fit_symbol_constants,
    input_digest,
    make_certificate,
    verify_besov_regularity,
    verify_continuous_dependence,
    verify_dissipation_balance,
    verify_mass_conservation,
    verify_max_principle,
    verify_nondegeneracy,
    verify_positivity,
    verify_stroock_varopoulos,
    verify_symbol_bounds,
    verify_transfer,
    write_certificate,
)
from src.config import REPORT_FILENAME, TIMING_FILENAME
from src.errors import LevyLabError
from src.schema import KERNEL_VERIFIERS, InitialConfig, ScenarioConfig

logger = logging.getLogger(__name__)

VERIFIER_STAGE = {name: "kernel" for name in KERNEL_VERIFIERS}


@dataclass
class StageRecord:
    name: str
    status: str
    reason: str = ""

    def to_dict(self) -> dict:
        return {"name": self.name, "status": self.status, "reason": self.reason}


@dataclass
class RunReport:
    """Outcome of one scenario; ``to_dict`` is the deterministic part written to report.json."""

    name: str
    digest: str
    config: dict
    certificates: list[Certificate]
    stages: list[StageRecord]
    skipped: dict[str, str]
    traces: list[dict]
    holder: Optional[dict]
    norms: pd.DataFrame
    metrics: dict
    artifacts: dict[str, str]
    timings: dict[str, float] = field(default_factory=dict)
    directory: Optional[Path] = None
    final: Optional[SampledField] = field(default=None, repr=False)

    @property
    def passed(self) -> bool:
        return (
            all(c.passed for c in self.certificates)
            and not self.skipped
            and all(s.status != "failed" for s in self.stages)
        )

    def certificate(self, name: str) -> Certificate:
        for cert in self.certificates:
            if cert.name == name:
                return cert
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "scenario": {"name": self.name, "digest": self.digest, "config": self.config},
            "passed": self.passed,
            "stages": [s.to_dict() for s in self.stages],
            "certificates": [c.to_dict() for c in self.certificates],
            "skipped_verifiers": self.skipped,
            "traces": self.traces,
            "holder": self.holder,
            "norms": self.norms.to_dict(orient="records"),
            "metrics": self.metrics,
            "artifacts": self.artifacts,
        }


class ScenarioRun:
    """Mutable state of one run while its stages execute inside ``directory``."""

    def __init__(self, config: ScenarioConfig, directory: Path) -> None:
        self.config = config
        self.directory = Path(directory)
        seeds = np.random.SeedSequence(config.seed).spawn(2)
        self.theta_rng = np.random.default_rng(seeds[0])
        self.verifier_rng = np.random.default_rng(seeds[1])
        self.grid = config.grid.build()
        self.kernel = config.kernel.build(self.grid.n) if config.kernel else None
        self.solver_config = config.solver.build() if config.solver else None
        self.problem: Optional[ViscousProblem] = None
        self.traj = None
        self.certificates: dict[str, Certificate] = {}
        self.skipped: dict[str, str] = {}
        self.stages: list[StageRecord] = []
        self.timings: dict[str, float] = {}
        self.artifacts: dict[str, str] = {}
        self.traces: list[dict] = []
        self.holder: Optional[dict] = None

    # -- bookkeeping ---------------------------------------------------------

    def _rel(self, path) -> str:
        return Path(path).relative_to(self.directory).as_posix()

    def _status(self, name: str) -> Optional[str]:
        return next((s.status for s in self.stages if s.name == name), None)

    def _stage(self, name: str, body: Callable[[], None], requires: tuple[str, ...] = ()) -> None:
        blocked = [r for r in requires if self._status(r) != "ok"]
        if blocked:
            reason = f"stage {blocked[0]} did not complete"
            logger.warning("Skipping stage %s: %s", name, reason)
            self.stages.append(StageRecord(name, "skipped", reason))
            return
        logger.info("Stage %s", name)
        start = time.perf_counter()
        try:
            body()
        except LevyLabError as exc:
            reason = f"{type(exc).__name__}: {exc}"
            logger.error("Stage %s failed: %s", name, reason)
            self.stages.append(StageRecord(name, "failed", reason))
        else:
            self.stages.append(StageRecord(name, "ok"))
        finally:
            self.timings[name] = time.perf_counter() - start

    def _verify(self, name: str, body: Callable[[], Certificate]) -> None:
        if name not in self.config.verifiers:
            return
        try:
            cert = body()
        except LevyLabError as exc:
            self.skipped[name] = f"{type(exc).__name__}: {exc}"
            logger.warning("Verifier %s skipped: %s", name, exc)
            return
        self._keep(dataclasses.replace(cert, name=name))

    def _keep(self, cert: Certificate) -> None:
        self.certificates[cert.name] = cert
        path = write_certificate(cert, self.directory / "certificates" / f"{cert.name}.json")
        self.artifacts[f"certificate:{cert.name}"] = self._rel(path)

    def _random_field(self) -> SampledField:
        return InitialConfig(kind="random", max_mode=self.config.theta0.max_mode).build(self.grid, self.verifier_rng)

    # -- stages --------------------------------------------------------------

    def kernel_stage(self) -> None:
        symbol = tabulate_symbol(self.kernel, self.grid)
        path = save_symbol_table(self.directory / "fields" / "symbol.bin", symbol, self.kernel)
        self.artifacts["symbol"] = self._rel(path)
        k = self.grid.k_magnitude.ravel()
        radii, first = np.unique(np.round(k, 12), return_index=True)
        a = symbol.values.ravel()[first]
        profile = pd.DataFrame({"k": radii, "a": a})
        profile["a_over_k_alpha"] = np.where(radii > 0, a / np.maximum(radii, 1e-300) ** self.kernel.alpha, np.nan)
        table = write_table(profile, self.directory / "tables" / "symbol_profile.csv", description=self.kernel.identifier)
        self.artifacts["table:symbol_profile"] = self._rel(table)
        self._verify("nondegeneracy", lambda: verify_nondegeneracy(self.kernel, self.config.verifier_options.tol))
        self._verify(
            "symbol_bounds",
            lambda: verify_symbol_bounds(
                symbol, self.kernel, fit_symbol_constants(self.kernel, self.grid), self.config.verifier_options.tol
            ),
        )

    def problem_stage(self) -> None:
        solver = self.config.solver
        theta0 = self.config.theta0.build(self.grid, self.theta_rng)
        v = self.config.drift.build(self.grid, self.config.seed, solver.horizon)
        self.problem = ViscousProblem(self.kernel, v, solver.epsilon_visc, theta0, solver.horizon, self.config.drift.params)

    def solve_stage(self) -> None:
        self.traj = solve(self.problem, self.solver_config)
        paths = export_trajectory(self.traj, self.directory / "fields")
        self.artifacts.update({f"trajectory:{k}": self._rel(p) for k, p in paths.items()})
        self._chart(self.traj.diagnostics, create_norm_history_chart, "norm_history", "Lp norms against time")
        if len(self.traj.windows):
            windows = self.traj.windows.drop(columns="residual_history")
            self._chart(
                windows, create_contraction_chart, "picard_windows", "local Picard windows",
                target=self.solver_config.contraction_target,
            )

    def verifier_stage(self) -> None:
        opts = self.config.verifier_options
        traj, problem, tol = self.traj, self.problem, opts.tol
        self._verify("max_principle", lambda: verify_max_principle(traj, opts.p_list, tol))
        self._verify(
            "positivity",
            lambda: verify_positivity(
                traj, opts.positivity_level or float(traj.initial.values.max()), tol, self.kernel, problem.drift_params
            ),
        )
        self._verify("mass_conservation", lambda: verify_mass_conservation(traj))
        self._verify("dissipation_balance", lambda: verify_dissipation_balance(traj, problem))
        self._verify(
            "stroock_varopoulos",
            lambda: combine_certificates(
                "stroock_varopoulos",
                [verify_stroock_varopoulos(f, problem.symbol, p, tol) for f in (traj.initial, traj.final) for p in opts.stroock_p],
            ),
        )
        self._verify("besov_regularity", self._besov)
        self._verify("transfer", self._transfer)
        self._verify("continuous_dependence", self._dependence)
        self._verify("pairing_chain", self._pairing_chain)
        self._verify("big_molecule", self._big_molecule)

    def _besov(self) -> Certificate:
        opts = self.config.verifier_options
        corpus = [self._random_field() for _ in range(opts.besov_corpus)]
        constants = calibrate_besov_constants(corpus, self.kernel, opts.besov_p)
        checks = [
            verify_besov_regularity(f, self.kernel, opts.besov_p, constants, opts.tol)
            for f in (self.traj.initial, self.traj.final)
        ]
        return combine_certificates("besov_regularity", checks)

    def _transfer(self) -> Certificate:
        psi0 = self._random_field()
        backward = backward_dual_solve(
            self.problem.v, self.kernel, psi0, self.problem.horizon, self.solver_config, self.problem.epsilon_visc
        )
        return verify_transfer(self.traj, backward)

    def _dependence(self) -> Certificate:
        opts = self.config.verifier_options
        direction = self._random_field()
        perturbation = direction.with_values(opts.perturbation * direction.values)
        report = continuous_dependence(self.problem, perturbation, self.solver_config, self.solver_config.norm_p)
        return verify_continuous_dependence(report, opts.tol)

    def _pairing_chain(self) -> Certificate:
        hp = self.config.holder_probe
        molecules = [
            make_molecule(r, self.grid.center(), hp.gamma, hp.omega_exp, hp.zeta, self.grid, "concentric")
            for r in hp.pairing_radii
        ]
        return verify_pairing_chain(self.traj, self.problem, molecules, config=self.solver_config)

    def _big_molecule(self) -> Certificate:
        hp = self.config.holder_probe
        m = make_molecule(hp.big_radius, self.grid.center(), hp.gamma, hp.omega_exp, hp.zeta, self.grid, "bump")
        return big_molecule_bound(self.traj.initial, self.traj.final, m, self.config.verifier_options.tol)

    def molecule_stage(self) -> None:
        ml, tol = self.config.molecule_lab, self.config.verifier_options.tol
        params = dataclasses.replace(
            RegimeParams.from_kernel(self.kernel, ml.gamma, ml.omega_exp, ml.q, ml.mu), eta_prefactor=ml.eta_prefactor
        )
        bundle = compute_constants(params)
        self.artifacts["constants"] = self._rel(bundle.save(self.directory / "tables" / "constants.json"))
        rows = [
            {"label": c.name, "lhs": c.value, "rhs": 0.0, "scale": max(abs(c.value), 1.0)} for c in bundle.certificates
        ]
        self._keep(make_certificate("constants", rows, tol, input_digest(params=bundle.to_dict()), {"K": bundle.K_bound}))
        center = tuple(ml.center) if ml.center else self.grid.center()
        molecules, traces = [], []
        for r in ml.radii:
            m = make_molecule(r, center, ml.gamma, ml.omega_exp, bundle.zeta_chosen, self.grid, ml.profile)
            molecules.append(check_molecule(m, tol))
            schedule = schedule_iterations(r, self.kernel.alpha, ml.eps_step, ml.T0, bundle)
            summary = {"r": r, "steps": len(schedule), "stop_reason": schedule.attrs.get("stop_reason")}
            if schedule.empty:
                self.traces.append(summary)
                continue
            trace = track_deformation(m, self.problem.v, self.kernel, bundle, schedule, self.solver_config, ml.eps_step, ml.split)
            stem = f"molecule_r{r:g}"
            paths = export_trace(trace, self.directory / "tables", stem)
            self._chart(trace.table, create_trace_bounds_chart, f"{stem}_bounds", "molecule trace", subtitle=f"r={r:g}")
            summary.update({"final_l1": trace.final_l1, "verdicts": trace.verdicts(tol), "table": self._rel(paths["table"])})
            self.traces.append(summary)
            traces.append(trace)
        self._keep(combine_certificates("molecule", molecules))
        if traces:
            self._keep(combine_certificates("molecule_trace", [t.to_certificate(tol) for t in traces]))
            constant = ml.l1_constant or fit_l1_control(traces, ml.T0).constant
            self._keep(combine_certificates("l1_control", [certify_l1_control(t, ml.T0, constant, tol) for t in traces]))
            control = fit_concentration_control(traces[:1])
            self._keep(combine_certificates("concentration", [certify_concentration(t, control, tol) for t in traces]))

    def holder_stage(self) -> None:
        hp = self.config.holder_probe
        t = hp.t or self.traj.horizon
        family = build_family(self.grid, hp.gamma, hp.omega_exp, hp.zeta, hp.profile, hp.stride, hp.r_max)
        bound = None
        if self.kernel is not None:
            ml = self.config.molecule_lab
            bound = classify_regime(self.kernel.alpha, self.kernel.delta, hp.gamma, hp.omega_exp, ml.q, self.grid.n).holder_bound
        _, _, report = estimate_holder_exponent(self.traj, family, t, hp.T0 or t, regime_bound=bound)
        paths = export_holder_report(report, self.directory / "tables")
        self.artifacts.update({f"holder:{k}": self._rel(p) for k, p in paths.items()})
        if report.verdict != "flat":
            chart = create_pairing_decay_chart(report.decay, slope=report.slope, subtitle=f"verdict {report.verdict}")
            self.artifacts["chart:pairing_decay"] = self._rel(save_chart(chart, self.directory / "charts" / "pairing_decay.vl.json"))
        self.holder = report.to_dict()

    def _chart(self, df: pd.DataFrame, build, stem: str, description: str, **kwargs) -> None:
        paths = emit_chart(df, build, self.directory / "tables", stem, description, self.directory / "charts", **kwargs)
        self.artifacts[f"table:{stem}"] = self._rel(paths["table"])
        self.artifacts[f"chart:{stem}"] = self._rel(paths["chart"])

    # -- driver --------------------------------------------------------------

    def execute(self) -> RunReport:
        config = self.config
        if self.kernel is not None:
            self._stage("kernel", self.kernel_stage)
        if config.needs_solve:
            self._stage("problem", self.problem_stage)
            self._stage("solve", self.solve_stage, requires=("problem",))
            if config.solve_verifiers:
                self._stage("verifiers", self.verifier_stage, requires=("solve",))
            if config.molecule_lab.enabled:
                self._stage("molecule_lab", self.molecule_stage, requires=("problem",))
            if config.holder_probe.enabled:
                self._stage("holder_probe", self.holder_stage, requires=("solve",))
        for name in config.verifiers:
            if name not in self.certificates and name not in self.skipped:
                stage = VERIFIER_STAGE.get(name, "verifiers")
                record = next((s for s in self.stages if s.name == stage), None)
                self.skipped[name] = record.reason if record else f"stage {stage} did not run"
        certificates = sorted(self.certificates.values(), key=lambda c: c.name)
        if certificates:
            verdicts = create_verdict_table(certificates)
            self.artifacts["table:verdicts"] = self._rel(
                write_table(verdicts, self.directory / "tables" / "verdicts.csv", description="certificate verdicts")
            )
        norms = self._norm_table()
        return RunReport(
            name=config.name,
            digest=config.digest(),
            config=json.loads(config.canonical()),
            certificates=certificates,
            stages=self.stages,
            skipped=dict(sorted(self.skipped.items())),
            traces=self.traces,
            holder=self.holder,
            norms=norms,
            metrics=self._metrics(norms),
            artifacts=dict(sorted(self.artifacts.items())),
            timings=self.timings,
            final=None if self.traj is None else self.traj.final,
        )

    def _norm_table(self) -> pd.DataFrame:
        if self.traj is None:
            return pd.DataFrame()
        columns = [c for c in ("time", "mass", "l1", "l2", "l4", "linf") if c in self.traj.diagnostics.columns]
        return self.traj.diagnostics[columns].iloc[[0, -1]].reset_index(drop=True)

    def _metrics(self, norms: pd.DataFrame) -> dict:
        metrics: dict = {}
        if len(norms):
            metrics.update({f"final_{c}": float(norms[c].iloc[-1]) for c in norms.columns if c != "time"})
        if self.traj is not None and len(self.traj.windows):
            metrics["picard_windows"] = int(len(self.traj.windows))
            metrics["max_contraction"] = float(self.traj.windows["contraction"].max())
        if "pairing_chain" in self.certificates:
            metrics["max_pairing"] = float(self.certificates["pairing_chain"].samples["lhs"].max())
        finals = [t["final_l1"] for t in self.traces if "final_l1" in t]
        if finals:
            metrics["molecule_final_l1"] = float(max(finals))
        if self.holder is not None:
            metrics["gamma_dual"] = self.holder["gamma_dual"]
            metrics["gamma_direct"] = self.holder["gamma_direct"]
        return metrics


def _write_report(report: RunReport, directory: Path) -> None:
    (directory / REPORT_FILENAME).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True, default=float) + "\n")
    timing = timing_table(report.timings)
    payload = {"stages": timing.to_dict(orient="records"), "total_seconds": float(timing["seconds"].sum())}
    (directory / TIMING_FILENAME).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def run_scenario(config: ScenarioConfig, output_root: Optional[Path] = None) -> RunReport:
    """Execute ``config`` and move its artifacts to ``<output_root>/<name>``."""
    root = Path(output_root if output_root is not None else config.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    destination = root / config.name
    staging = Path(tempfile.mkdtemp(prefix=f".{config.name}-", dir=root))
    try:
        report = ScenarioRun(config, staging).execute()
        _write_report(report, staging)
        if destination.exists():
            shutil.rmtree(destination)
        os.replace(staging, destination)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    report.directory = destination
    logger.info("Run %s written to %s (%s)", config.name, destination, "pass" if report.passed else "fail")
    return report
