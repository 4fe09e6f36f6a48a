"""Grid norms: Lebesgue, Morrey-Campanato, Besov, Holder and Sobolev.

Suprema are taken over every grid point as a center and over the dyadic
radius ladder h, 2h, ..., L/2, so every Morrey value is a lower bound of the
continuous supremum.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd

from src.components.grid import Grid, SampledField, apply_multiplier, fftn, ifftn_real
from src.errors import ConfigurationError, PreconditionError, RadiusOverflowError

logger = logging.getLogger(__name__)

FieldLike = Union[SampledField, "VectorSlice"]


@dataclass(frozen=True, eq=False)
class VectorSlice:
    """Vector-valued grid field, components stacked on axis 0."""

    grid: Grid
    components: np.ndarray

    def __post_init__(self) -> None:
        if self.components.shape[1:] != self.grid.shape:
            raise ConfigurationError("vector components do not match grid")


@dataclass(frozen=True)
class MorreyParams:
    q: float = 2.0
    a: float = 0.0
    local: bool = False

    def __post_init__(self) -> None:
        if self.q < 1:
            raise ConfigurationError(f"Morrey q must be >= 1, got {self.q}", "morrey.q")
        if self.a < 0:
            raise ConfigurationError(f"Morrey a must be >= 0, got {self.a}", "morrey.a")

    def validate_for(self, n: int) -> None:
        if self.a >= n + self.q:
            raise ConfigurationError(f"Morrey a={self.a} must be < n + q = {n + self.q}", "morrey.a")

    def describe(self) -> dict:
        return {"q": self.q, "a": self.a, "local": self.local}


@dataclass(frozen=True)
class NormProfile:
    """Smoothness/integrability pair for a target norm."""

    smoothness: float
    p: float = 2.0
    kind: str = "holder"

    def __post_init__(self) -> None:
        if self.kind not in ("holder", "besov", "sobolev"):
            raise ConfigurationError(f"unknown smoothness norm {self.kind!r}")
        if self.kind in ("holder", "besov") and not 0 < self.smoothness < 1:
            raise ConfigurationError(f"{self.kind} exponent must lie in (0, 1), got {self.smoothness}")
        if self.p < 1:
            raise ConfigurationError(f"integrability p must be >= 1, got {self.p}")

    def hardy_index(self, n: int) -> float:
        """sigma with gamma = n (1/sigma - 1): the Hardy space dual to C^gamma."""
        return n / (n + self.smoothness)

    def evaluate(self, field: SampledField) -> float:
        if self.kind == "holder":
            return holder_norm(field, self.smoothness)
        if self.kind == "besov":
            return besov_seminorm(field, self.smoothness, self.p)
        return sobolev_norm(field, self.smoothness, self.p)


def _stack(field: FieldLike) -> np.ndarray:
    if isinstance(field, VectorSlice):
        return np.asarray(field.components, dtype=float)
    return np.asarray(field.values, dtype=float)[None, ...]


def lp_norm(field: FieldLike, p: float) -> float:
    """Grid L^p norm with cell volume h^n (pointwise Euclidean magnitude for vectors)."""
    magnitude = np.sqrt(np.sum(_stack(field) ** 2, axis=0))
    if np.isinf(p):
        return float(magnitude.max())
    return float((np.sum(magnitude**p) * field.grid.cell_volume) ** (1.0 / p))


def lp_array(values: np.ndarray, p: float, grid: Grid) -> float:
    if np.isinf(p):
        return float(np.max(np.abs(values)))
    return float((np.sum(np.abs(values) ** p) * grid.cell_volume) ** (1.0 / p))


def inner(f: SampledField, g: SampledField) -> float:
    """Grid inner product sum f g h^n."""
    return float(np.sum(f.values * g.values) * f.grid.cell_volume)


# ---------------------------------------------------------------------------
# Morrey-Campanato
# ---------------------------------------------------------------------------


def _indicator(grid: Grid, offsets: np.ndarray) -> np.ndarray:
    ind = np.zeros(grid.shape)
    ind[tuple((offsets % grid.points_per_dim).T)] = 1.0
    return ind


def _ball_sums(values: np.ndarray, ind_hat: np.ndarray) -> np.ndarray:
    """sum over the ball of values(x + o), for every x (ball is symmetric mod N)."""
    return ifftn_real(fftn(values) * ind_hat)


def _oscillation_sums(stack: np.ndarray, grid: Grid, offsets: np.ndarray, q: float) -> np.ndarray:
    """sum_o |f(x+o) - mean_B(x)|^q at every center x."""
    ind_hat = fftn(_indicator(grid, offsets))
    count = len(offsets)
    # oscillation does not see constants
    axes = tuple(range(1, stack.ndim))
    stack = stack - stack.mean(axis=axes, keepdims=True)
    means = np.stack([_ball_sums(c, ind_hat) / count for c in stack])
    if q == 2:
        second = sum(_ball_sums(c**2, ind_hat) for c in stack)
        return np.maximum(second - count * np.sum(means**2, axis=0), 0.0)
    total = np.zeros(grid.shape)
    for o in offsets:
        shifted = np.roll(stack, shift=tuple(-o), axis=axes)
        total += np.sqrt(np.sum((shifted - means) ** 2, axis=0)) ** q
    return total


def morrey_profile(field: FieldLike, params: MorreyParams) -> pd.DataFrame:
    """Per-radius supremum over centers, tagged by branch ('oscillation' or 'plain')."""
    grid = field.grid
    params.validate_for(grid.n)
    stack = _stack(field)
    rows = []
    for r in grid.dyadic_radii():
        offsets = grid.ball_offsets(r)
        plain = params.local and r >= 1.0
        if plain:
            magnitude = np.sqrt(np.sum(stack**2, axis=0)) ** params.q
            sums = _ball_sums(magnitude, fftn(_indicator(grid, offsets)))
        else:
            sums = _oscillation_sums(stack, grid, offsets, params.q)
        sup = float(np.max(np.maximum(sums, 0.0)))
        value = (r ** (-params.a) * sup * grid.cell_volume) ** (1.0 / params.q)
        rows.append({"radius": r, "branch": "plain" if plain else "oscillation", "value": value, "count": len(offsets)})
    return pd.DataFrame(rows)


def morrey_norm(field: FieldLike, params: MorreyParams) -> float:
    """Homogeneous Morrey-Campanato norm, or the local variant when ``params.local``."""
    profile = morrey_profile(field, params)
    osc = profile.loc[profile["branch"] == "oscillation", "value"]
    plain = profile.loc[profile["branch"] == "plain", "value"]
    value = (float(osc.max()) if len(osc) else 0.0) + (float(plain.max()) if len(plain) else 0.0)
    logger.debug("Morrey norm q=%g a=%g local=%s -> %.6g", params.q, params.a, params.local, value)
    return value


def ball_mean(field: FieldLike, center: Sequence[float], radius: float) -> np.ndarray:
    """Average over the closed torus ball; a vector for vector fields."""
    mask = field.grid.torus_distance(center) <= radius * (1 + 1e-12)
    if not mask.any():
        raise ConfigurationError(f"ball of radius {radius} around {tuple(center)} holds no grid point")
    return np.array([c[mask].mean() for c in _stack(field)])


# ---------------------------------------------------------------------------
# Besov, Holder, Sobolev
# ---------------------------------------------------------------------------


def _nonzero_offsets(grid: Grid) -> np.ndarray:
    offsets = grid.ball_offsets(grid.side_length / 2)
    return offsets[np.any(offsets != 0, axis=1)]


def besov_seminorm(field: SampledField, s: float, p: float) -> float:
    """Difference-form homogeneous Besov seminorm with h <= |y| <= L/2."""
    grid = field.grid
    if not 0 < s < 1 or p < 1:
        raise ConfigurationError(f"Besov seminorm needs 0 < s < 1 and p >= 1, got s={s}, p={p}")
    if s * p >= p + grid.n:
        raise PreconditionError(f"sp={s * p} must stay below p + n = {p + grid.n}")
    h = grid.spacing
    axes = tuple(range(grid.n))
    total = 0.0
    f = field.values
    for o in _nonzero_offsets(grid):
        dist = h * np.sqrt(np.sum(o**2))
        diff = f - np.roll(f, shift=tuple(o), axis=axes)
        total += np.sum(np.abs(diff) ** p) / dist ** (grid.n + s * p)
    return float((total * grid.cell_volume**2) ** (1.0 / p))


def holder_profile(field: SampledField) -> pd.DataFrame:
    """Largest |f(x + y) - f(x)| for every grid offset y with 0 < |y| <= L/2."""
    grid = field.grid
    h = grid.spacing
    axes = tuple(range(grid.n))
    f = field.values
    offsets = _nonzero_offsets(grid)
    spread = [float(np.max(np.abs(f - np.roll(f, shift=tuple(o), axis=axes)))) for o in offsets]
    return pd.DataFrame({"distance": h * np.sqrt(np.sum(offsets**2, axis=1)), "max_difference": spread})


def holder_seminorm(field: SampledField, gamma: float, profile: Optional[pd.DataFrame] = None) -> float:
    """max |f(x) - f(y)| / |x - y|^gamma over all pairs within L/2."""
    profile = holder_profile(field) if profile is None else profile
    if profile.empty:
        return 0.0
    return float((profile["max_difference"] / profile["distance"] ** gamma).max())


def holder_norm(field: SampledField, gamma: float) -> float:
    """||f||_inf + Holder seminorm."""
    if not 0 < gamma < 1:
        raise ConfigurationError(f"Holder exponent must lie in (0, 1), got {gamma}")
    return float(np.max(np.abs(field.values))) + holder_seminorm(field, gamma)


def fractional_laplacian(field: SampledField, s: float) -> SampledField:
    """(-Delta)^{s/2} f; the zero mode maps to itself only when s = 0."""
    grid = field.grid
    if s == 0:
        return field
    multiplier = grid.k_magnitude**s
    return field.with_values(apply_multiplier(field.values, multiplier))


def sobolev_norm(field: SampledField, s: float, p: float) -> float:
    """||f||_p + ||(-Delta)^{s/2} f||_p."""
    return lp_norm(field, p) + lp_norm(fractional_laplacian(field, s), p)


# ---------------------------------------------------------------------------
# Dyadic oscillation
# ---------------------------------------------------------------------------


@dataclass
class OscillationReport:
    lhs: float
    rhs_shape: float
    regime: str
    norm: float
    extra: dict = field(default_factory=dict)

    @property
    def ratio(self) -> float:
        return self.lhs / self.rhs_shape if self.rhs_shape > 0 else float("inf") if self.lhs > 0 else 0.0

    def to_dict(self) -> dict:
        return {"lhs": self.lhs, "rhs_shape": self.rhs_shape, "ratio": self.ratio, "regime": self.regime, "norm": self.norm}


def dyadic_oscillation_check(
    field: FieldLike,
    params: MorreyParams,
    center: Sequence[float],
    rho: float,
    k: int,
    norm: Optional[float] = None,
) -> OscillationReport:
    """|mean over B(2^k rho) - mean over B(rho)| against its Morrey shape."""
    grid = field.grid
    if k < 1:
        raise ConfigurationError(f"k must be >= 1, got {k}")
    if not 0 < rho < 1:
        raise ConfigurationError(f"rho must lie in (0, 1), got {rho}")
    if 2**k * rho > grid.side_length / 2 * (1 + 1e-12):
        raise RadiusOverflowError(f"2^k rho = {2**k * rho:.4g} exceeds L/2 = {grid.side_length / 2:.4g}")
    norm = morrey_norm(field, params) if norm is None else norm
    lhs = float(np.linalg.norm(ball_mean(field, center, 2**k * rho) - ball_mean(field, center, rho)))
    n, a, q = grid.n, params.a, params.q
    if a < n:
        regime, rhs = "a<n", rho ** ((a - n) / q) * norm
    elif a > n:
        regime, rhs = "a>n", (2**k * rho) ** ((a - n) / q) * norm
    else:
        regime, rhs = "a=n", k * norm
    return OscillationReport(lhs=lhs, rhs_shape=float(rhs), regime=regime, norm=norm, extra={"rho": rho, "k": k})


# ---------------------------------------------------------------------------
# Named evaluation for reports
# ---------------------------------------------------------------------------

NORM_PARAMETERS = {
    "lp": ("p",),
    "morrey": ("q", "a", "local"),
    "besov": ("s", "p"),
    "holder": ("gamma",),
    "sobolev": ("s", "p"),
}


def evaluate_norm(field: SampledField, name: str, params: dict) -> float:
    if name not in NORM_PARAMETERS:
        raise ConfigurationError(f"unknown norm {name!r}; expected one of {sorted(NORM_PARAMETERS)}")
    unknown = set(params) - set(NORM_PARAMETERS[name])
    if unknown:
        raise ConfigurationError(f"unknown parameter(s) {sorted(unknown)} for norm {name!r}")
    if name == "lp":
        return lp_norm(field, float(params.get("p", 2.0)))
    if name == "morrey":
        return morrey_norm(
            field,
            MorreyParams(float(params.get("q", 2.0)), float(params.get("a", 0.0)), bool(params.get("local", False))),
        )
    if name == "holder":
        return NormProfile(float(params.get("gamma", 0.5)), kind="holder").evaluate(field)
    default_s = 0.5 if name == "besov" else 1.0
    return NormProfile(float(params.get("s", default_s)), float(params.get("p", 2.0)), kind=name).evaluate(field)


def norm_report(field: SampledField, specs: Sequence[tuple[str, dict]]) -> list[dict]:
    """JSON records {norm_name, params, value}."""
    return [{"norm_name": name, "params": dict(params), "value": evaluate_norm(field, name, params)} for name, params in specs]
