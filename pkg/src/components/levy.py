"""Levy kernels, their Levy-Khinchin symbols and operator application.

Kernels are radial jump densities on R^n. The symbol

    a(xi) = int (1 - cos(xi . y)) pi(y) dy

is evaluated in polar form. The angular average of the cosine is a Bessel
function, so only a radial quadrature is left. The near part on [0, 1] is
integrated by composite Gauss-Legendre on log-spaced panels, and power-law
tails on |y| > 1 are closed exactly from the full-space identity for
|y|^{-n-beta}.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy import special

from src.components.grid import Grid, SampledField, apply_multiplier, ifftn_real, require_same_grid, smooth_cutoff
from src.components.spaces import lp_array
from src.components.tables import ScalingReport, scaling_report
from src.config import HEAT_MIN_CELLS, KERNEL_PROFILES, QUADRATURE, SYMBOL_MAGIC
from src.errors import ConfigurationError, FieldFormatError, QuadratureError, UnderResolvedError

logger = logging.getLogger(__name__)


def sphere_area(n: int) -> float:
    """Surface measure of the unit sphere S^{n-1}."""
    return 2.0 * np.pi ** (n / 2) / special.gamma(n / 2)


def ball_volume(n: int) -> float:
    """Volume v_n of the unit ball."""
    return np.pi ** (n / 2) / special.gamma(n / 2 + 1)


def fractional_constant(n: int, beta: float) -> float:
    """C with int_{R^n} (1 - cos(xi.y)) |y|^{-n-beta} dy = C |xi|^beta."""
    return float(
        np.pi ** (n / 2) * abs(special.gamma(-beta / 2)) / (2.0**beta * special.gamma((n + beta) / 2))
    )


@dataclass(frozen=True)
class LevyKernel:
    """Radial jump density with near exponent alpha and far exponent delta."""

    alpha: float
    delta: float
    cbar1: float = 1.0
    cbar2: float = 1.0
    profile: str = "stable"
    n: int = 2
    amplitude: Optional[float] = None

    def __post_init__(self) -> None:
        a, d = self.alpha, self.delta
        if self.profile not in KERNEL_PROFILES:
            raise ConfigurationError(f"unknown profile {self.profile!r}; expected one of {KERNEL_PROFILES}", "kernel.profile")
        if not (0 < a < 2) or a == 1:
            raise ConfigurationError(f"alpha must lie in (0,1) or (1,2), got {a}", "kernel.alpha")
        if not (0 < d < a):
            raise ConfigurationError(f"delta must lie in (0, alpha), got {d}", "kernel.delta")
        if (a < 1) != (d < 1) or d == 1:
            raise ConfigurationError("alpha and delta must both lie in (0,1) or both in (1,2)", "kernel.delta")
        if not (0 < self.cbar1 <= self.cbar2):
            raise ConfigurationError("require 0 < cbar1 <= cbar2", "kernel.cbar1")
        if self.n < 1:
            raise ConfigurationError("dimension must be >= 1", "kernel.n")
        if self.amplitude is None:
            object.__setattr__(self, "amplitude", float(self.cbar1))
        elif not self.amplitude > 0:
            raise ConfigurationError("amplitude must be positive", "kernel.amplitude")

    @property
    def far_exponent(self) -> Optional[float]:
        """Exponent of the power-law tail beyond |y| = 1, None when truncated."""
        if self.profile == "stable":
            return self.alpha
        if self.profile == "two-exponent":
            return self.delta
        return None

    @property
    def identifier(self) -> str:
        return (
            f"{self.profile}:n={self.n}:alpha={self.alpha:g}:delta={self.delta:g}"
            f":amp={self.amplitude:g}:c1={self.cbar1:g}:c2={self.cbar2:g}"
        )

    def density(self, radius: np.ndarray) -> np.ndarray:
        """pi at |y| = radius (radius > 0)."""
        r = np.asarray(radius, dtype=float)
        near = self.amplitude * r ** (-self.n - self.alpha)
        beta = self.far_exponent
        far = np.zeros_like(r) if beta is None else self.amplitude * r ** (-self.n - beta)
        return np.where(r <= 1.0, near, far)

    def density_at(self, points: np.ndarray) -> np.ndarray:
        """pi at an (m, n) array of sample points."""
        return self.density(np.linalg.norm(np.atleast_2d(points), axis=1))

    def describe(self) -> dict:
        return {
            "alpha": self.alpha,
            "delta": self.delta,
            "cbar1": self.cbar1,
            "cbar2": self.cbar2,
            "profile": self.profile,
            "n": self.n,
            "amplitude": self.amplitude,
        }


@dataclass(frozen=True, eq=False)
class LevySymbol:
    """Symbol a(k) tabulated on the frequency lattice of a grid (FFT ordering)."""

    grid: Grid
    values: np.ndarray
    kernel_id: str

    def __post_init__(self) -> None:
        if self.values.shape != self.grid.shape:
            raise ConfigurationError("symbol table does not match grid")


def zero_symbol(grid: Grid) -> LevySymbol:
    """Symbol of the zero operator."""
    values = np.zeros(grid.shape)
    values.flags.writeable = False
    return LevySymbol(grid, values, "zero")


# ---------------------------------------------------------------------------
# Radial quadrature
# ---------------------------------------------------------------------------


def angular_factor(x: np.ndarray, n: int) -> np.ndarray:
    """|S^{n-1}| times the spherical mean of 1 - cos, as a function of x = |xi| r."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = np.abs(x) < QUADRATURE["series_cutoff"]
    xs = x[small]
    out[small] = xs**2 / (2 * n) - xs**4 / (8 * n * (n + 2))
    xl = x[~small]
    nu = n / 2 - 1
    out[~small] = 1.0 - special.gamma(n / 2) * (2.0 / xl) ** nu * special.jv(nu, xl)
    return sphere_area(n) * out


def _near_integral(k: np.ndarray, beta: float, n: int) -> np.ndarray:
    """Q_beta(k) = int_0^1 r^{-1-beta} A_n(k r) dr for every k, with panel doubling."""
    r_min = QUADRATURE["r_min"]
    nodes, weights = np.polynomial.legendre.leggauss(QUADRATURE["gauss_order"])
    patch = sphere_area(n) * k**2 / (2 * n) * r_min ** (2 - beta) / (2 - beta)

    def composite(panels: int) -> np.ndarray:
        edges = np.geomspace(r_min, 1.0, panels + 1)
        lo, hi = edges[:-1, None], edges[1:, None]
        r = (0.5 * (hi - lo) * nodes[None, :] + 0.5 * (hi + lo)).ravel()
        w = (0.5 * (hi - lo) * weights[None, :]).ravel()
        integrand = angular_factor(np.outer(k, r), n) * r ** (-1 - beta)
        return integrand @ w

    panels = QUADRATURE["initial_panels"]
    previous = composite(panels)
    while True:
        panels *= 2
        current = composite(panels)
        scale = np.maximum(np.abs(current), np.finfo(float).tiny)
        change = np.max(np.abs(current - previous) / scale) if k.size else 0.0
        logger.debug("near quadrature beta=%.3f panels=%d change=%.2e", beta, panels, change)
        if change < QUADRATURE["rel_tol"]:
            return current + patch
        if panels >= QUADRATURE["max_panels"]:
            worst = int(np.argmax(np.abs(current - previous) / scale))
            raise QuadratureError(
                f"symbol quadrature did not converge at |xi|={k[worst]:.6g}",
                (previous[worst], current[worst]),
            )
        previous = current


def radial_symbol(kernel: LevyKernel, k: np.ndarray) -> np.ndarray:
    """a at radial frequencies ``k`` (any shape)."""
    k = np.asarray(k, dtype=float)
    flat = k.ravel()
    out = np.zeros_like(flat)
    active = flat > 0
    ks = flat[active]
    chunk = QUADRATURE["chunk"]
    values = np.empty_like(ks)
    beta = kernel.far_exponent
    for start in range(0, ks.size, chunk):
        part = ks[start:start + chunk]
        near = _near_integral(part, kernel.alpha, kernel.n)
        if beta is None:
            far = 0.0
        elif beta == kernel.alpha:
            far = fractional_constant(kernel.n, beta) * part**beta - near
        else:
            far = fractional_constant(kernel.n, beta) * part**beta - _near_integral(part, beta, kernel.n)
        values[start:start + chunk] = kernel.amplitude * (near + far)
    out[active] = np.maximum(values, 0.0)
    return out.reshape(k.shape)


def symbol_eval(kernel: LevyKernel, xi: Sequence[float]) -> float:
    """Levy-Khinchin symbol at a single frequency vector."""
    magnitude = float(np.linalg.norm(np.atleast_1d(np.asarray(xi, dtype=float))))
    if magnitude == 0.0:
        return 0.0
    return float(radial_symbol(kernel, np.array([magnitude]))[0])


@lru_cache(maxsize=32)
def tabulate_symbol(kernel: LevyKernel, grid: Grid) -> LevySymbol:
    """Symbol on every lattice frequency, evaluated once per distinct |k|."""
    if kernel.n != grid.n:
        raise ConfigurationError(f"kernel dimension {kernel.n} does not match grid dimension {grid.n}")
    k2 = np.rint(sum(m**2 for m in grid.mode_indices)).astype(np.int64)
    unique, inverse = np.unique(k2, return_inverse=True)
    radii = np.sqrt(unique) * (2.0 * np.pi / grid.side_length)
    table = radial_symbol(kernel, radii)
    values = table[inverse].reshape(grid.shape)
    values.flags.writeable = False
    logger.info("Tabulated symbol %s on %d distinct radii", kernel.identifier, unique.size)
    return LevySymbol(grid, values, kernel.identifier)


def symbol_for(kernel: Optional[LevyKernel], grid: Grid) -> LevySymbol:
    """Tabulated symbol, or the zero symbol when no operator is present."""
    return zero_symbol(grid) if kernel is None else tabulate_symbol(kernel, grid)


def save_symbol_table(path: Path, symbol: LevySymbol, kernel: LevyKernel) -> Path:
    """Header (n, points_per_dim, L, alpha, delta) followed by row-major float64 values."""
    grid = symbol.grid
    header = SYMBOL_MAGIC + struct.pack(
        "<IIddd", grid.n, grid.points_per_dim, grid.side_length, kernel.alpha, kernel.delta
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(header + np.ascontiguousarray(symbol.values, dtype="<f8").tobytes())
    return path


def load_symbol_table(path: Path) -> tuple[LevySymbol, float, float]:
    """Inverse of save_symbol_table; returns (symbol, alpha, delta)."""
    raw = Path(path).read_bytes()
    if raw[:4] != SYMBOL_MAGIC:
        raise FieldFormatError(f"{path}: not a symbol table")
    n, N, L, alpha, delta = struct.unpack_from("<IIddd", raw, 4)
    grid = Grid(n=n, points_per_dim=N, side_length=L)
    offset = 4 + struct.calcsize("<IIddd")
    if len(raw) - offset != 8 * N**n:
        raise FieldFormatError(f"{path}: payload size does not match header")
    values = np.frombuffer(raw, dtype="<f8", offset=offset).reshape(grid.shape).copy()
    values.flags.writeable = False
    return LevySymbol(grid, values, f"file:{Path(path).name}"), alpha, delta


# ---------------------------------------------------------------------------
# Non-degeneracy and decomposition
# ---------------------------------------------------------------------------


@dataclass
class NondegeneracyReport:
    near_min: float
    near_max: float
    far_min: float
    far_max: float
    symmetric: bool
    passed: bool
    violations: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "near_min": self.near_min,
            "near_max": self.near_max,
            "far_min": self.far_min,
            "far_max": self.far_max,
            "symmetric": self.symmetric,
            "passed": self.passed,
            "violations": self.violations[:20],
        }


def default_test_lattice(n: int, count: int = 64, seed: int = 0) -> np.ndarray:
    """Sample points with |y| spread log-uniformly over [1e-3, 1e3]."""
    rng = np.random.default_rng(seed)
    radii = np.geomspace(1e-3, 1e3, count)
    directions = rng.normal(size=(count, n))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    return radii[:, None] * directions


def check_nondegeneracy(kernel: LevyKernel, lattice: Optional[np.ndarray] = None) -> NondegeneracyReport:
    """Two-sided near bound and one-sided far bound of pi on the sample lattice."""
    points = default_test_lattice(kernel.n) if lattice is None else np.atleast_2d(np.asarray(lattice, dtype=float))
    if points.size == 0:
        raise ConfigurationError("non-degeneracy lattice is empty")
    radii = np.linalg.norm(points, axis=1)
    if np.any(radii == 0):
        raise ConfigurationError("non-degeneracy lattice must exclude y = 0")
    values = kernel.density_at(points)
    symmetric = bool(np.array_equal(values, kernel.density_at(-points)))
    n = kernel.n
    near = radii <= 1
    violations: list[dict] = []
    near_ratio = values[near] * radii[near] ** (n + kernel.alpha)
    far_ratio = values[~near] * radii[~near] ** (n + kernel.delta)
    for r, ratio in zip(radii[near], near_ratio):
        if ratio < kernel.cbar1 * (1 - 1e-12) or ratio > kernel.cbar2 * (1 + 1e-12):
            violations.append({"radius": float(r), "ratio": float(ratio), "bound": "near", "range": [kernel.cbar1, kernel.cbar2]})
    for r, ratio in zip(radii[~near], far_ratio):
        if ratio < 0 or ratio > kernel.cbar2 * (1 + 1e-12):
            violations.append({"radius": float(r), "ratio": float(ratio), "bound": "far", "range": [0.0, kernel.cbar2]})

    def _ext(arr, fn):
        return float(fn(arr)) if arr.size else float("nan")

    report = NondegeneracyReport(
        near_min=_ext(near_ratio, np.min),
        near_max=_ext(near_ratio, np.max),
        far_min=_ext(far_ratio, np.min),
        far_max=_ext(far_ratio, np.max),
        symmetric=symmetric,
        passed=symmetric and not violations,
        violations=violations,
    )
    if not report.passed:
        logger.warning("Kernel %s violates non-degeneracy at %d sample(s)", kernel.identifier, len(violations))
    return report


@dataclass(frozen=True)
class ResidualDensity:
    """Signed density pi - pi_tilde, supported in |y| > 1."""

    kernel: LevyKernel

    def __call__(self, radius: np.ndarray) -> np.ndarray:
        r = np.asarray(radius, dtype=float)
        k = self.kernel
        tilde = k.amplitude * r ** (-k.n - k.alpha)
        return np.where(r > 1.0, k.density(r) - tilde, 0.0)

    def tail_constant(self, radii: Sequence[float]) -> float:
        """max |pi_under(y)| |y|^{n+delta} over the given radii."""
        r = np.asarray(radii, dtype=float)
        return float(np.max(np.abs(self(r)) * r ** (self.kernel.n + self.kernel.delta)))


def decompose_kernel(kernel: LevyKernel) -> tuple[LevyKernel, ResidualDensity]:
    """Split pi into a stable-tailed kernel and a residual living beyond |y| = 1."""
    tilde = LevyKernel(
        alpha=kernel.alpha,
        delta=kernel.delta,
        cbar1=kernel.cbar1,
        cbar2=kernel.cbar2,
        profile="stable",
        n=kernel.n,
        amplitude=kernel.amplitude,
    )
    return tilde, ResidualDensity(kernel)


# ---------------------------------------------------------------------------
# Operator application
# ---------------------------------------------------------------------------


def apply_operator(field: SampledField, symbol: LevySymbol) -> SampledField:
    """L f as the spectral multiplier a(k) f_hat(k)."""
    require_same_grid(field, symbol)
    return field.with_values(apply_multiplier(field.values, symbol.values))


def apply_commutator(cutoff: SampledField, field: SampledField, symbol: LevySymbol) -> SampledField:
    """[L, phi] f = L(phi f) - phi L f."""
    require_same_grid(cutoff, field, symbol)
    product = apply_multiplier(cutoff.values * field.values, symbol.values)
    return field.with_values(product - cutoff.values * apply_multiplier(field.values, symbol.values))



def commutator_bound_check(
    kernel: LevyKernel,
    field: SampledField,
    R_list: Sequence[float] = (1.0, 2.0, 4.0),
    p: float = np.inf,
    center: Optional[Sequence[float]] = None,
) -> ScalingReport:
    """||[L, phi_R] f||_p against R^{-alpha} + R^{-delta} across R."""
    symbol = tabulate_symbol(kernel, field.grid)
    rows = []
    for R in R_list:
        phi = smooth_cutoff(field.grid, R, center)
        lhs = lp_array(apply_commutator(phi, field, symbol).values, p, field.grid)
        rows.append({"R": float(R), "lhs": lhs, "rhs_shape": R ** -kernel.alpha + R ** -kernel.delta})
    return scaling_report("commutator_bound", pd.DataFrame(rows), "R")


@dataclass
class HeatKernelCheck:
    t: float
    beta: float
    lhs: float
    rhs_shape: float

    @property
    def ratio(self) -> float:
        return self.lhs / self.rhs_shape


def heat_levy_l1_check(kernel: LevyKernel, t: float, beta: float, grid: Optional[Grid] = None) -> HeatKernelCheck:
    """L1 norm of L (-Delta)^{beta/2} h_t on the torus with its time shape."""
    grid = Grid(n=kernel.n, points_per_dim=128) if grid is None else grid
    if not 0 <= beta <= 2:
        raise ConfigurationError(f"beta must lie in [0, 2], got {beta}")
    if t <= 0 or np.sqrt(2 * t) < HEAT_MIN_CELLS * grid.spacing:
        raise UnderResolvedError(
            f"heat kernel width sqrt(2t)={np.sqrt(2 * max(t, 0)):.4g} is below {HEAT_MIN_CELLS:g} cells (h={grid.spacing:.4g})"
        )
    symbol = tabulate_symbol(kernel, grid)
    multiplier = symbol.values * grid.k_magnitude**beta * np.exp(-t * grid.k_squared)
    density = ifftn_real(multiplier) * grid.points_per_dim**grid.n / grid.volume
    lhs = float(np.abs(density).sum() * grid.cell_volume)
    rhs = t ** (-(kernel.alpha + beta) / 2) + t ** (-(kernel.delta + beta) / 2)
    return HeatKernelCheck(t=t, beta=beta, lhs=lhs, rhs_shape=float(rhs))


def heat_levy_sweep(
    kernel: LevyKernel, times: Sequence[float], beta: float, grid: Optional[Grid] = None
) -> ScalingReport:
    rows = []
    for t in times:
        check = heat_levy_l1_check(kernel, t, beta, grid)
        rows.append({"t": t, "lhs": check.lhs, "rhs_shape": check.rhs_shape})
    return scaling_report(f"heat_levy_beta={beta:g}", pd.DataFrame(rows), "t")
