"""Scenario configuration: strict pydantic models loaded from YAML.

A scenario file is a YAML mapping. ``include:`` lists other files (relative to
the including file) whose trees are merged underneath it, and ``key.path=value``
overrides are applied last. Unknown keys are rejected.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
from pathlib import Path
from typing import Any, Iterable, Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from ruamel.yaml import YAML
from ruamel.yaml.error import YAMLError

from src.components.drift import DriftSpec, MollifierPair, VelocityField, make_divfree, mollify
from src.components.grid import Grid, SampledField
from src.components.levy import LevyKernel
from src.components.solver import SolverConfig, heat_semigroup
from src.components.spaces import MorreyParams
from src.config import CENTER_STRIDE, EPS_STEP, ETA_PREFACTOR, SOLVER_DEFAULTS, VERIFIER_TOL
from src.errors import ConfigurationError

logger = logging.getLogger(__name__)

VERIFIER_NAMES = (
    "nondegeneracy",
    "symbol_bounds",
    "max_principle",
    "positivity",
    "mass_conservation",
    "dissipation_balance",
    "stroock_varopoulos",
    "besov_regularity",
    "transfer",
    "continuous_dependence",
    "pairing_chain",
    "big_molecule",
)
KERNEL_VERIFIERS = ("nondegeneracy", "symbol_bounds")
VerifierName = Literal[VERIFIER_NAMES]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GridConfig(_Section):
    n: int = Field(2, ge=1, le=3)
    points_per_dim: int = Field(64, ge=8)
    side_length: float = Field(2 * math.pi, gt=0)

    def build(self) -> Grid:
        return Grid(n=self.n, points_per_dim=self.points_per_dim, side_length=self.side_length)


class KernelConfig(_Section):
    alpha: float
    delta: float
    cbar1: float = 1.0
    cbar2: float = 1.0
    profile: Literal["stable", "truncated-stable", "two-exponent"] = "stable"
    amplitude: Optional[float] = None

    def build(self, n: int) -> LevyKernel:
        return LevyKernel(self.alpha, self.delta, self.cbar1, self.cbar2, self.profile, n, self.amplitude)


class DriftConfig(_Section):
    kind: Literal["stream", "leray", "shear", "constant", "zero"] = "zero"
    amplitude: float = Field(1.0, ge=0)
    max_mode: int = Field(4, ge=1)
    width: float = Field(0.5, gt=0)
    mode: int = Field(1, ge=1)
    stream_profile: Literal["random", "bump"] = "random"
    vector: Optional[list[float]] = None
    time_nodes: int = Field(1, ge=1)
    modulation: Literal["none", "cosine"] = "none"
    target_norm: Optional[float] = Field(None, gt=0)
    morrey_q: float = Field(2.0, ge=1)
    morrey_a: float = Field(1.0, ge=0)
    mollifier: Optional[float] = Field(None, gt=0)

    @property
    def params(self) -> MorreyParams:
        return MorreyParams(q=self.morrey_q, a=self.morrey_a)

    def build(self, grid: Grid, seed: int, horizon: float) -> VelocityField:
        spec = DriftSpec(
            kind=self.kind,
            amplitude=self.amplitude,
            max_mode=self.max_mode,
            width=self.width,
            mode=self.mode,
            stream_profile=self.stream_profile,
            vector=None if self.vector is None else tuple(self.vector),
            seed=seed,
            time_nodes=self.time_nodes,
            horizon=horizon,
            modulation=self.modulation,
            target_norm=self.target_norm,
        )
        v = make_divfree(spec, grid, self.params)
        if self.mollifier is not None:
            v = mollify(v, MollifierPair(self.mollifier))
        return v


class InitialConfig(_Section):
    kind: Literal["random", "noise", "gaussian", "mode", "constant"] = "random"
    max_mode: int = Field(4, ge=1)
    width: float = Field(0.5, gt=0)
    mode: list[int] = Field(default_factory=lambda: [1, 0])
    amplitude: float = 1.0
    positive: bool = False
    smoothing: float = Field(0.0, ge=0)

    def build(self, grid: Grid, rng: np.random.Generator) -> SampledField:
        """Seeded initial field; ``positive`` maps it into [0, amplitude]."""
        if self.kind == "random":
            spectrum = np.zeros(grid.shape, dtype=complex)
            mask = np.ones(grid.shape, dtype=bool)
            for m in grid.mode_indices:
                mask &= np.abs(m) <= self.max_mode
            spectrum[mask] = rng.normal(size=mask.sum()) + 1j * rng.normal(size=mask.sum())
            values = np.fft.ifftn(spectrum).real
        elif self.kind == "noise":
            values = rng.normal(size=grid.shape)
        elif self.kind == "gaussian":
            values = np.exp(-grid.torus_distance(grid.center()) ** 2 / (2 * self.width**2))
        elif self.kind == "mode":
            if len(self.mode) != grid.n:
                raise ConfigurationError(f"mode needs {grid.n} entries, got {self.mode}", "theta0.mode")
            scale = 2 * np.pi / grid.side_length
            values = np.cos(sum(scale * m * x for m, x in zip(self.mode, grid.coordinates)))
        else:
            values = np.ones(grid.shape)
        field = SampledField(grid, values)
        if self.smoothing > 0:
            field = heat_semigroup(field, self.smoothing)
        values = field.values
        if self.positive:
            low, high = values.min(), values.max()
            values = (values - low) / (high - low) if high > low else np.ones_like(values)
        else:
            peak = np.abs(values).max()
            values = values / peak if peak > 0 else values
        return SampledField(grid, self.amplitude * values, time=0.0)


class SolverSection(_Section):
    scheme: Literal["picard-duhamel", "imex-spectral"] = SOLVER_DEFAULTS["scheme"]
    dt: float = Field(SOLVER_DEFAULTS["dt"], gt=0)
    epsilon_visc: float = Field(0.01, ge=0)
    horizon: float = Field(1.0, gt=0)
    store_every: int = Field(SOLVER_DEFAULTS["store_every"], ge=1)
    picard_tol: float = Field(SOLVER_DEFAULTS["picard_tol"], gt=0)
    max_iters: int = Field(SOLVER_DEFAULTS["max_iters"], ge=1)
    min_window_nodes: int = Field(SOLVER_DEFAULTS["min_window_nodes"], ge=1)
    contraction_target: float = Field(SOLVER_DEFAULTS["contraction_target"], gt=0, lt=1)
    norm_p: float = Field(SOLVER_DEFAULTS["norm_p"], ge=1)

    def build(self) -> SolverConfig:
        return SolverConfig(
            dt=self.dt,
            scheme=self.scheme,
            picard_tol=self.picard_tol,
            max_iters=self.max_iters,
            min_window_nodes=self.min_window_nodes,
            contraction_target=self.contraction_target,
            store_every=self.store_every,
            norm_p=self.norm_p,
        )


class VerifierOptions(_Section):
    tol: float = Field(VERIFIER_TOL, gt=0)
    p_list: list[float] = Field(default_factory=lambda: [1.0, 2.0, 4.0, math.inf])
    positivity_level: Optional[float] = Field(None, gt=0)
    stroock_p: list[float] = Field(default_factory=lambda: [2.0, 4.0])
    besov_p: float = Field(2.0, ge=2)
    besov_corpus: int = Field(4, ge=1)
    perturbation: float = Field(1e-2, gt=0)


class MoleculeLabConfig(_Section):
    enabled: bool = False
    gamma: float = Field(0.2, gt=0, lt=1)
    omega_exp: float = Field(0.5, gt=0, lt=1)
    q: float = Field(20.0, gt=1)
    mu: float = Field(1.0, gt=0)
    eta_prefactor: float = Field(ETA_PREFACTOR, gt=0)
    radii: list[float] = Field(default_factory=lambda: [0.25])
    center: Optional[list[float]] = None
    profile: Literal["concentric", "dipole"] = "concentric"
    eps_step: float = Field(EPS_STEP, gt=0)
    T0: float = Field(2.0, gt=0)
    split: bool = False
    l1_constant: Optional[float] = Field(None, gt=0)

    @field_validator("radii", mode="before")
    @classmethod
    def _scalar_radius(cls, value: Any) -> Any:
        return [value] if isinstance(value, (int, float)) else value

    @field_validator("radii")
    @classmethod
    def _small_radii(cls, value: list[float]) -> list[float]:
        if not value or any(not 0 < r < 1 for r in value):
            raise ValueError("radii must be a non-empty list of sizes in (0, 1)")
        return value

    @model_validator(mode="after")
    def _ordered_exponents(self) -> "MoleculeLabConfig":
        if not self.gamma < self.omega_exp:
            raise ValueError(f"gamma={self.gamma} must be below omega_exp={self.omega_exp}")
        return self


class HolderProbeConfig(_Section):
    enabled: bool = False
    gamma: float = Field(0.2, gt=0, lt=1)
    omega_exp: float = Field(0.5, gt=0, lt=1)
    zeta: float = Field(2.0, gt=1)
    profile: Literal["concentric", "dipole"] = "dipole"
    stride: int = Field(CENTER_STRIDE, ge=1)
    r_max: Optional[float] = Field(None, gt=0)
    t: Optional[float] = Field(None, gt=0)
    T0: Optional[float] = Field(None, gt=0)
    pairing_radii: list[float] = Field(default_factory=lambda: [0.5])
    big_radius: float = Field(1.0, ge=1)

    @field_validator("pairing_radii", mode="before")
    @classmethod
    def _scalar_radius(cls, value: Any) -> Any:
        return [value] if isinstance(value, (int, float)) else value

    @model_validator(mode="after")
    def _ordered_exponents(self) -> "HolderProbeConfig":
        if not self.gamma < self.omega_exp:
            raise ValueError(f"gamma={self.gamma} must be below omega_exp={self.omega_exp}")
        return self


class ScenarioConfig(_Section):
    name: str = Field("scenario", pattern=r"^[A-Za-z0-9_.=+-]+$")
    seed: int = Field(0, ge=0)
    output_dir: str = "runs"
    grid: GridConfig = Field(default_factory=GridConfig)
    kernel: Optional[KernelConfig] = None
    drift: DriftConfig = Field(default_factory=DriftConfig)
    theta0: InitialConfig = Field(default_factory=InitialConfig)
    solver: Optional[SolverSection] = None
    verifiers: list[VerifierName] = Field(default_factory=list)
    verifier_options: VerifierOptions = Field(default_factory=VerifierOptions)
    molecule_lab: MoleculeLabConfig = Field(default_factory=MoleculeLabConfig)
    holder_probe: HolderProbeConfig = Field(default_factory=HolderProbeConfig)

    @field_validator("verifiers")
    @classmethod
    def _unique(cls, value: list[str]) -> list[str]:
        seen = [v for i, v in enumerate(value) if v in value[:i]]
        if seen:
            raise ValueError(f"verifier(s) listed twice: {sorted(set(seen))}")
        return value

    @model_validator(mode="after")
    def _resolvable(self) -> "ScenarioConfig":
        needs_kernel = [v for v in self.verifiers if v in KERNEL_VERIFIERS + ("stroock_varopoulos", "besov_regularity")]
        if self.molecule_lab.enabled:
            needs_kernel.append("molecule_lab")
        if needs_kernel and self.kernel is None:
            raise ConfigurationError(f"{sorted(set(needs_kernel))} need a kernel section", "kernel")
        if self.kernel is not None:
            self.kernel.build(self.grid.n)
        if self.needs_solve and self.solver is None:
            raise ConfigurationError("solve stages need a solver section", "solver")
        self.drift.params.validate_for(self.grid.n)
        return self

    @property
    def solve_verifiers(self) -> list[str]:
        return [v for v in self.verifiers if v not in KERNEL_VERIFIERS]

    @property
    def needs_solve(self) -> bool:
        return bool(self.solve_verifiers) or self.molecule_lab.enabled or self.holder_probe.enabled

    def canonical(self) -> str:
        return json.dumps(self.model_dump(), sort_keys=True, separators=(",", ":"), default=str)

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


def _yaml() -> YAML:
    return YAML(typ="safe")


def deep_merge(base: dict, top: dict) -> dict:
    """Recursive merge where ``top`` wins on conflicts."""
    merged = dict(base)
    for key, value in top.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _read_tree(path: Path, chain: tuple[Path, ...] = ()) -> dict:
    path = path.resolve()
    if path in chain:
        cycle = " -> ".join(p.name for p in (*chain, path))
        raise ConfigurationError(f"include cycle: {cycle}", "include")
    if not path.exists():
        raise ConfigurationError(f"scenario file {path} not found", "include" if chain else None)
    try:
        data = _yaml().load(path.read_text())
    except YAMLError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    data = {} if data is None else data
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: scenario root must be a mapping")
    includes = data.pop("include", [])
    if isinstance(includes, str):
        includes = [includes]
    merged: dict = {}
    for item in includes:
        merged = deep_merge(merged, _read_tree(path.parent / str(item), (*chain, path)))
    return deep_merge(merged, data)


def parse_value(raw: str) -> Any:
    try:
        return _yaml().load(raw)
    except YAMLError:
        return raw


def apply_overrides(tree: dict, overrides: Optional[Iterable[str]]) -> dict:
    """Apply ``dotted.path=value`` strings; values are parsed as YAML scalars or lists."""
    tree = copy.deepcopy(tree)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} must look like key.path=value")
        path, raw = item.split("=", 1)
        keys = [k for k in path.strip().split(".") if k]
        if not keys:
            raise ConfigurationError(f"override {item!r} has an empty key path")
        cursor = tree
        for key in keys[:-1]:
            nxt = cursor.setdefault(key, {})
            if not isinstance(nxt, dict):
                raise ConfigurationError(f"cannot descend into non-mapping {key!r}", path)
            cursor = nxt
        cursor[keys[-1]] = parse_value(raw.strip())
    return tree


def _first_error(exc: ValidationError) -> tuple[str, Optional[str]]:
    errors = exc.errors()
    messages = []
    field_path = None
    for err in errors:
        path = ".".join(str(p) for p in err["loc"])
        cause = err.get("ctx", {}).get("error")
        if isinstance(cause, ConfigurationError) and cause.field_path:
            path = cause.field_path
            messages.append(str(cause))
        else:
            messages.append(f"{path or '<root>'}: {err['msg']}")
        field_path = field_path or path or None
    return "; ".join(messages), field_path


def validate_scenario(tree: dict) -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(tree)
    except ValidationError as exc:
        message, field_path = _first_error(exc)
        err = ConfigurationError(message)
        err.field_path = field_path
        raise err from exc


def load_scenario(path: Path, overrides: Optional[Sequence[str]] = None) -> ScenarioConfig:
    """Read, merge includes, apply overrides and validate a scenario file."""
    tree = apply_overrides(_read_tree(Path(path)), overrides)
    config = validate_scenario(tree)
    logger.info("Loaded scenario %s from %s (digest %s)", config.name, path, config.digest()[:12])
    return config


def scalar_at(config: ScenarioConfig, path: str) -> Any:
    """Value at a dotted path of ``config``; mappings are rejected."""
    cursor: Any = config.model_dump()
    for key in path.split("."):
        if not isinstance(cursor, dict) or key not in cursor:
            raise ConfigurationError("does not address a config field", path)
        cursor = cursor[key]
    if isinstance(cursor, dict):
        raise ConfigurationError("addresses a section, not a scalar field", path)
    return cursor


def with_value(config: ScenarioConfig, path: str, value: Any, name: Optional[str] = None) -> ScenarioConfig:
    """Copy of ``config`` with the field at ``path`` replaced, revalidated."""
    scalar_at(config, path)
    tree = config.model_dump()
    keys = path.split(".")
    cursor = tree
    for key in keys[:-1]:
        cursor = cursor[key]
    cursor[keys[-1]] = value
    if name is not None:
        tree["name"] = name
    return validate_scenario(tree)
