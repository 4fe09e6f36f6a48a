"""Divergence-free drifts: generation, mollification and the cutoff lemma."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from src.components.grid import Grid, SampledField, bump_profile, distance_from_origin, fftn, ifftn_real, smooth_cutoff
from src.components.spaces import MorreyParams, VectorSlice, lp_array, morrey_norm
from src.components.tables import ScalingReport, scaling_report
from src.config import DIVERGENCE_TOL, MOLLIFIER_MASS_TOL
from src.errors import ConfigurationError, PreconditionError, UnderResolvedError

logger = logging.getLogger(__name__)

DRIFT_KINDS = ("stream", "leray", "shear", "constant", "zero")


def spectral_divergence(grid: Grid, components: np.ndarray) -> np.ndarray:
    """div v computed with exact spectral derivatives."""
    spectrum = sum(1j * k * fftn(c) for k, c in zip(grid.derivative_wavenumbers, components))
    return ifftn_real(spectrum)


def leray_project(grid: Grid, components: np.ndarray) -> np.ndarray:
    """Remove the gradient part: v_hat - k (k . v_hat) / |k|^2."""
    hats = [fftn(c) for c in components]
    ks = grid.derivative_wavenumbers
    k2 = sum(k**2 for k in ks)
    k2[k2 == 0] = 1.0
    k_dot = sum(k * h for k, h in zip(ks, hats)) / k2
    return np.stack([ifftn_real(h - k * k_dot) for k, h in zip(ks, hats)])


@dataclass(frozen=True, eq=False)
class VelocityField:
    """Divergence-free vector field sampled at ascending time nodes.

    ``components`` has shape (len(time_nodes), n, *grid.shape).
    """

    grid: Grid
    time_nodes: np.ndarray
    components: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        nodes = np.atleast_1d(np.asarray(self.time_nodes, dtype=float))
        comps = np.asarray(self.components, dtype=float)
        expected = (len(nodes), self.grid.n) + self.grid.shape
        if comps.shape != expected:
            raise ConfigurationError(f"velocity components have shape {comps.shape}, expected {expected}")
        if len(nodes) > 1 and np.any(np.diff(nodes) <= 0):
            raise ConfigurationError("velocity time nodes must be strictly ascending")
        if not np.all(np.isfinite(comps)):
            raise ConfigurationError("velocity contains non-finite values")
        object.__setattr__(self, "time_nodes", nodes)
        object.__setattr__(self, "components", comps)
        scale = float(np.abs(comps).max()) * float(self.grid.k_magnitude.max())
        for i in range(len(nodes)):
            div = float(np.abs(spectral_divergence(self.grid, comps[i])).max())
            if div > DIVERGENCE_TOL * max(scale, 1e-300):
                raise ConfigurationError(f"velocity is not divergence free at node {i}: max|div v|={div:.3e}")

    @classmethod
    def zero(cls, grid: Grid) -> "VelocityField":
        return cls(grid, np.array([0.0]), np.zeros((1, grid.n) + grid.shape), {"kind": "zero"})

    @property
    def steady(self) -> bool:
        return len(self.time_nodes) == 1

    @property
    def is_zero(self) -> bool:
        return not np.any(self.components)

    def at(self, t: float) -> np.ndarray:
        """Linear interpolation in time, held constant outside the node range."""
        nodes = self.time_nodes
        if self.steady or t <= nodes[0]:
            return self.components[0]
        if t >= nodes[-1]:
            return self.components[-1]
        j = int(np.searchsorted(nodes, t, side="right"))
        w = (t - nodes[j - 1]) / (nodes[j] - nodes[j - 1])
        return (1 - w) * self.components[j - 1] + w * self.components[j]

    def slice(self, t: float) -> VectorSlice:
        return VectorSlice(self.grid, self.at(t))

    def reversed(self, t_final: float) -> "VelocityField":
        """s -> v(t_final - s)."""
        nodes = t_final - self.time_nodes[::-1]
        meta = dict(self.meta, reversed_from=t_final)
        return VelocityField(self.grid, nodes, self.components[::-1].copy(), meta)

    def scaled(self, factor: float) -> "VelocityField":
        return VelocityField(self.grid, self.time_nodes, factor * self.components, dict(self.meta, scale=factor))

    def sup_norm(self) -> float:
        return float(np.sqrt(np.sum(self.components**2, axis=1)).max())

    def morrey_norm(self, params: MorreyParams) -> float:
        """L-infinity in time of the Morrey norm over the stored nodes."""
        return max(morrey_norm(VectorSlice(self.grid, c), params) for c in self.components)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.time_nodes).tobytes())
        h.update(np.ascontiguousarray(self.components).tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class DriftSpec:
    """Generator description for a synthetic drift."""

    kind: str = "leray"
    amplitude: float = 1.0
    max_mode: int = 4
    width: float = 0.5
    mode: int = 1
    stream_profile: str = "random"
    vector: Optional[tuple[float, ...]] = None
    seed: int = 0
    time_nodes: int = 1
    horizon: float = 1.0
    modulation: str = "none"
    target_norm: Optional[float] = None

    def __post_init__(self) -> None:
        if self.kind not in DRIFT_KINDS:
            raise ConfigurationError(f"unknown drift kind {self.kind!r}; expected one of {DRIFT_KINDS}", "drift.kind")
        if self.modulation not in ("none", "cosine"):
            raise ConfigurationError(f"unknown modulation {self.modulation!r}", "drift.modulation")
        if self.stream_profile not in ("random", "bump"):
            raise ConfigurationError(f"unknown stream profile {self.stream_profile!r}", "drift.stream_profile")
        if self.time_nodes < 1:
            raise ConfigurationError("time_nodes must be >= 1", "drift.time_nodes")


def _band_limited(grid: Grid, rng: np.random.Generator, max_mode: int) -> np.ndarray:
    mask = np.ones(grid.shape, dtype=bool)
    for m in grid.mode_indices:
        mask &= np.abs(m) <= max_mode
    spectrum = np.zeros(grid.shape, dtype=complex)
    spectrum[mask] = rng.normal(size=mask.sum()) + 1j * rng.normal(size=mask.sum())
    spectrum[(0,) * grid.n] = 0.0
    return ifftn_real(spectrum)


def _spatial_pattern(spec: DriftSpec, grid: Grid) -> np.ndarray:
    n = grid.n
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "zero":
        return np.zeros((n,) + grid.shape)
    if spec.kind == "constant":
        vector = spec.vector or (1.0,) + (0.0,) * (n - 1)
        if len(vector) != n:
            raise ConfigurationError(f"constant drift needs {n} components", "drift.vector")
        return np.stack([np.full(grid.shape, float(c)) for c in vector])
    if spec.kind == "shear":
        if n < 2:
            raise ConfigurationError("shear drift needs n >= 2", "drift.kind")
        k = 2.0 * np.pi * spec.mode / grid.side_length
        comps = np.zeros((n,) + grid.shape)
        comps[0] = np.sin(k * grid.coordinates[1])
        return comps
    if spec.kind == "stream":
        if n != 2:
            raise ConfigurationError("stream-function drifts are two-dimensional; use 'leray' for n != 2", "drift.kind")
        if spec.stream_profile == "bump":
            phi = np.exp(-grid.torus_distance(grid.center()) ** 2 / (2 * spec.width**2))
        else:
            phi = _band_limited(grid, rng, spec.max_mode)
        phi_hat = fftn(phi)
        kx, ky = grid.derivative_wavenumbers
        return np.stack([ifftn_real(-1j * ky * phi_hat), ifftn_real(1j * kx * phi_hat)])
    raw = np.stack([_band_limited(grid, rng, spec.max_mode) for _ in range(n)])
    return leray_project(grid, raw)


def make_divfree(
    spec: DriftSpec,
    grid: Grid,
    profile: Optional[MorreyParams] = None,
) -> VelocityField:
    """Build the drift described by ``spec`` and attach its Morrey norm for ``profile``."""
    pattern = _spatial_pattern(spec, grid)
    peak = float(np.sqrt(np.sum(pattern**2, axis=0)).max())
    if peak > 0 and spec.kind not in ("constant",):
        pattern = pattern * (spec.amplitude / peak)
    if spec.time_nodes == 1:
        nodes = np.array([0.0])
        comps = pattern[None, ...]
    else:
        nodes = np.linspace(0.0, spec.horizon, spec.time_nodes)
        factors = np.cos(2 * np.pi * nodes / spec.horizon) if spec.modulation == "cosine" else np.ones_like(nodes)
        comps = np.einsum("t,c...->tc...", factors, pattern)
    meta = {"kind": spec.kind, "seed": spec.seed, "generator_family": "synthetic"}
    velocity = VelocityField(grid, nodes, comps, meta)
    if profile is not None:
        norm = velocity.morrey_norm(profile)
        if spec.target_norm is not None and norm > 0:
            velocity = velocity.scaled(spec.target_norm / norm)
            norm = spec.target_norm
        velocity.meta.update({"morrey": norm, "morrey_params": profile.describe()})
        logger.info("Drift %s: Morrey(q=%g, a=%g) norm %.4g", spec.kind, profile.q, profile.a, norm)
    return velocity


# ---------------------------------------------------------------------------
# Mollification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MollifierPair:
    """Time bump psi_eps and space bump omega_eps sharing the width epsilon."""

    epsilon: float

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ConfigurationError(f"mollifier width must be positive, got {self.epsilon}", "mollifier.epsilon")

    def space_kernel(self, grid: Grid) -> np.ndarray:
        """omega_eps sampled around the origin with unit discrete mass."""
        if self.epsilon < grid.spacing:
            raise UnderResolvedError(f"mollifier width {self.epsilon:.4g} is below grid spacing {grid.spacing:.4g}")
        values = bump_profile(distance_from_origin(grid) / self.epsilon)
        mass = values.sum() * grid.cell_volume
        kernel = values / mass
        if abs(kernel.sum() * grid.cell_volume - 1.0) > MOLLIFIER_MASS_TOL:
            raise ConfigurationError("space mollifier lost unit mass")
        return kernel

    def time_weights(self, dt: float) -> np.ndarray:
        """Weights psi_eps(j dt) dt for integer j, normalised over the whole lattice."""
        if self.epsilon < dt:
            raise UnderResolvedError(f"mollifier width {self.epsilon:.4g} is below time-node spacing {dt:.4g}")
        reach = int(np.ceil(self.epsilon / dt))
        j = np.arange(-reach, reach + 1)
        weights = bump_profile(j * dt / self.epsilon)
        return weights / weights.sum()


def time_mollify(v: VelocityField, m: MollifierPair) -> VelocityField:
    """Convolve in time with psi_eps, v extended by zero outside the node range."""
    if v.steady:
        return v
    dt = float(np.diff(v.time_nodes).mean())
    if not np.allclose(np.diff(v.time_nodes), dt):
        raise ConfigurationError("time mollification needs uniform time nodes")
    weights = m.time_weights(dt)
    reach = len(weights) // 2
    count = len(v.time_nodes)
    out = np.zeros_like(v.components)
    for i in range(count):
        for j, w in zip(range(i - reach, i + reach + 1), weights):
            if 0 <= j < count:
                out[i] += w * v.components[j]
    return VelocityField(v.grid, v.time_nodes, out, dict(v.meta, time_mollified=m.epsilon))


def space_mollify(v: VelocityField, m: MollifierPair) -> VelocityField:
    """Convolve every node with omega_eps as a spectral multiplier."""
    multiplier = (fftn(m.space_kernel(v.grid)) * v.grid.cell_volume).real
    axes = tuple(range(2, 2 + v.grid.n))
    out = ifftn_real(fftn(v.components, axes=axes) * multiplier, axes=axes)
    return VelocityField(v.grid, v.time_nodes, out, dict(v.meta, space_mollified=m.epsilon))


def mollify(v: VelocityField, m: MollifierPair) -> VelocityField:
    """v_eps = (v * psi_eps in time) * omega_eps in space."""
    return space_mollify(time_mollify(v, m), m)


def mollifier_sup_check(v: VelocityField, epsilons: Sequence[float], params: MorreyParams) -> ScalingReport:
    """||v_eps||_inf against eps^{-n/q} ||v||_{L^inf(M^{q,a})} across widths."""
    norm = v.morrey_norm(params)
    rows = []
    for eps in epsilons:
        smoothed = space_mollify(v, MollifierPair(eps))
        rows.append({"epsilon": eps, "lhs": smoothed.sup_norm(), "rhs_shape": eps ** (-v.grid.n / params.q) * norm})
    return scaling_report("mollifier_sup", pd.DataFrame(rows), "epsilon")


# ---------------------------------------------------------------------------
# Drift cutoff lemma
# ---------------------------------------------------------------------------


def drift_cutoff_shape(R: float, n: int, p: float, alpha: float, params: MorreyParams) -> float:
    exponent = -1 + n / p
    if alpha > 1:
        exponent += (params.a - n) / params.q
    return R**exponent


def verify_drift_cutoff_bound(
    v: VelocityField,
    field: SampledField,
    M: float,
    p: float,
    alpha: float,
    params: MorreyParams,
    R_list: Sequence[float] = (1.0, 2.0, 4.0),
    center: Optional[Sequence[float]] = None,
    norm: Optional[float] = None,
) -> ScalingReport:
    """||(field - M/2) v . grad phi_R||_p against R^{-1+n/p}(...)||v|| across R (max over time nodes)."""
    grid = field.grid
    if alpha > 1 and params.q < p:
        raise PreconditionError(f"alpha > 1 needs q >= p, got q={params.q}, p={p}")
    if any(R < 1 for R in R_list):
        raise ConfigurationError("cutoff radii must be >= 1")
    norm = v.morrey_norm(params) if norm is None else norm
    rows = []
    for R in R_list:
        phi_hat = fftn(smooth_cutoff(grid, R, center).values)
        grad = [ifftn_real(1j * k * phi_hat) for k in grid.derivative_wavenumbers]
        lhs = 0.0
        for comps in v.components:
            transport = sum(c * g for c, g in zip(comps, grad))
            lhs = max(lhs, lp_array((field.values - M / 2) * transport, p, grid))
        rows.append({"R": float(R), "lhs": lhs, "rhs_shape": drift_cutoff_shape(R, grid.n, p, alpha, params) * norm})
    return scaling_report("drift_cutoff", pd.DataFrame(rows), "R")
