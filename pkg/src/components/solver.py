"""Transport-diffusion integrators for the mollified viscous problem.

The evolution is

    d/dt theta = div(v theta) - L theta + eps Laplace(theta)

on the torus. Two integrators share one discrete drift operator:

* ``picard_solve`` iterates the Duhamel map built on the heat semigroup over
  local windows whose length keeps the contraction constant below 1/2, and
  chains the windows up to the horizon.
* ``imex_solve`` splits the exact dissipative multiplier from the transport
  flow, which is advanced by a truncated exponential series.

The drift operator is dealiased and skew-adjoint in the grid inner product,
so the backward dual problem run with the reversed drift is the exact adjoint
of the forward run.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy.optimize import brentq

from src.components.drift import MollifierPair, VelocityField, mollify
from src.components.grid import FieldStack, Grid, SampledField, fftn, ifftn_real, require_same_grid
from src.components.levy import LevyKernel, LevySymbol, symbol_for
from src.components.spaces import MorreyParams, inner, lp_array, lp_norm
from src.config import (
    CALIBRATION_MARGIN,
    CALIBRATION_POWER_ITERS,
    CALIBRATION_PROBES,
    CALIBRATION_STARTS,
    MIN_VISCOSITY_RUNS,
    MOLLIFIER_FLOOR_CELLS,
    SOLVER_DEFAULTS,
    TAYLOR_MAX_TERMS,
    TAYLOR_TOL,
)
from src.errors import (
    CFLViolationError,
    ConfigurationError,
    PicardDivergenceError,
    PreconditionError,
    WindowDegenerateError,
)

logger = logging.getLogger(__name__)

SCHEMES = ("picard-duhamel", "imex-spectral")
DIAGNOSTIC_NORMS = (1.0, 2.0, 4.0, np.inf)


@dataclass(frozen=True, eq=False)
class ViscousProblem:
    """Data of one forward run: kernel, (mollified) drift, viscosity, initial field and horizon."""

    kernel: Optional[LevyKernel]
    v: VelocityField
    epsilon_visc: float
    theta0: SampledField
    horizon: float
    drift_params: MorreyParams = field(default_factory=lambda: MorreyParams(q=2.0, a=1.0))

    def __post_init__(self) -> None:
        if self.epsilon_visc < 0:
            raise ConfigurationError(f"viscosity must be >= 0, got {self.epsilon_visc}", "solver.epsilon_visc")
        if not self.horizon > 0:
            raise ConfigurationError(f"horizon must be positive, got {self.horizon}", "solver.horizon")
        require_same_grid(self.v, self.theta0)
        if self.kernel is not None and self.kernel.n != self.grid.n:
            raise ConfigurationError(f"kernel dimension {self.kernel.n} does not match grid dimension {self.grid.n}")

    @property
    def grid(self) -> Grid:
        return self.theta0.grid

    @cached_property
    def symbol(self) -> LevySymbol:
        return symbol_for(self.kernel, self.grid)

    @cached_property
    def decay(self) -> np.ndarray:
        """a(k) + eps |k|^2 on the frequency lattice."""
        rate = self.symbol.values + self.epsilon_visc * self.grid.k_squared
        rate[(0,) * self.grid.n] = 0.0
        return rate

    @cached_property
    def drift_norm(self) -> float:
        """||v||_{L^inf(M^{q,a})}, reused from the generator when it was attached."""
        cached = self.v.meta.get("morrey")
        if cached is not None and self.v.meta.get("morrey_params") == self.drift_params.describe():
            return float(cached)
        return self.v.morrey_norm(self.drift_params)

    def with_initial(self, theta0: SampledField, horizon: Optional[float] = None) -> "ViscousProblem":
        return dataclasses.replace(self, theta0=theta0, horizon=self.horizon if horizon is None else horizon)

    def describe(self) -> dict:
        return {
            "kernel": None if self.kernel is None else self.kernel.describe(),
            "epsilon_visc": self.epsilon_visc,
            "horizon": self.horizon,
            "grid": self.grid.describe(),
            "drift_digest": self.v.digest(),
            "drift_params": self.drift_params.describe(),
        }


@dataclass(frozen=True)
class SolverConfig:
    dt: float = SOLVER_DEFAULTS["dt"]
    scheme: str = SOLVER_DEFAULTS["scheme"]
    picard_tol: float = SOLVER_DEFAULTS["picard_tol"]
    max_iters: int = SOLVER_DEFAULTS["max_iters"]
    min_window_nodes: int = SOLVER_DEFAULTS["min_window_nodes"]
    contraction_target: float = SOLVER_DEFAULTS["contraction_target"]
    store_every: int = SOLVER_DEFAULTS["store_every"]
    norm_p: float = SOLVER_DEFAULTS["norm_p"]

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ConfigurationError(f"dt must be positive, got {self.dt}", "solver.dt")
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}", "solver.scheme")
        if not self.picard_tol > 0:
            raise ConfigurationError("picard_tol must be positive", "solver.picard_tol")
        if self.max_iters < 1 or self.min_window_nodes < 1 or self.store_every < 1:
            raise ConfigurationError("max_iters, min_window_nodes and store_every must be >= 1", "solver")
        if not 0 < self.contraction_target < 1:
            raise ConfigurationError("contraction_target must lie in (0, 1)", "solver.contraction_target")


@dataclass(frozen=True, eq=False)
class TrajectorySolution:
    """Stored fields of a run with one diagnostics row per stored time."""

    times: np.ndarray
    fields: list[SampledField]
    diagnostics: pd.DataFrame
    windows: pd.DataFrame = field(default_factory=pd.DataFrame)
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        times = np.asarray(self.times, dtype=float)
        if len(times) != len(self.fields) or len(times) != len(self.diagnostics):
            raise ConfigurationError("trajectory times, fields and diagnostics are not aligned")
        if np.any(np.diff(times) <= 0):
            raise ConfigurationError("trajectory times must be strictly ascending")
        object.__setattr__(self, "times", times)

    @property
    def grid(self) -> Grid:
        return self.fields[0].grid

    @property
    def initial(self) -> SampledField:
        return self.fields[0]

    @property
    def final(self) -> SampledField:
        return self.fields[-1]

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def norms(self, p: float) -> np.ndarray:
        return np.array([lp_norm(f, p) for f in self.fields])

    def field_at(self, t: float) -> SampledField:
        """Stored field closest to ``t``."""
        return self.fields[int(np.argmin(np.abs(self.times - t)))]


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------


def heat_semigroup(field: SampledField, tau: float) -> SampledField:
    """e^{tau Laplace} f as the multiplier exp(-tau |k|^2)."""
    if tau < 0:
        raise ConfigurationError(f"heat time must be >= 0, got {tau}")
    if tau == 0:
        return field
    return field.with_values(ifftn_real(np.exp(-tau * field.grid.k_squared) * fftn(field.values)))


def _transport_mask(grid: Grid) -> np.ndarray:
    mask = grid.dealias_mask.copy()
    mask[(0,) * grid.n] = False
    return mask


class TransportOperator:
    """Dealiased skew-adjoint form of theta -> div(v theta) for one frozen velocity."""

    def __init__(self, grid: Grid, components: np.ndarray) -> None:
        self.grid = grid
        self.mask = _transport_mask(grid)
        self.velocity = [ifftn_real(fftn(c) * grid.dealias_mask) for c in components]
        self.speed = float(np.sqrt(np.sum(np.asarray(components) ** 2, axis=0)).max())

    @property
    def is_zero(self) -> bool:
        return self.speed == 0.0

    def __call__(self, values: np.ndarray) -> np.ndarray:
        if self.is_zero:
            return np.zeros_like(values)
        theta_hat = fftn(values) * self.mask
        theta = ifftn_real(theta_hat)
        ks = self.grid.derivative_wavenumbers
        div_hat = sum(1j * k * fftn(c * theta) for k, c in zip(ks, self.velocity))
        advect = sum(c * ifftn_real(1j * k * theta_hat) for k, c in zip(ks, self.velocity))
        return ifftn_real(0.5 * (div_hat + fftn(advect)) * self.mask)

    def flow(self, values: np.ndarray, dt: float) -> np.ndarray:
        """exp(dt D) values by a truncated exponential series."""
        if self.is_zero:
            return values
        total = values.copy()
        term = values
        scale = max(float(np.abs(values).max()), 1e-300)
        for j in range(1, TAYLOR_MAX_TERMS + 1):
            term = (dt / j) * self(term)
            total += term
            if float(np.abs(term).max()) <= TAYLOR_TOL * scale:
                return total
        raise CFLViolationError(f"transport series did not converge in {TAYLOR_MAX_TERMS} terms at dt={dt:.4g}")


def cfl_limit(problem: ViscousProblem) -> float:
    """h / (2 max|v|); infinite for a zero drift."""
    speed = problem.v.sup_norm()
    return np.inf if speed == 0 else problem.grid.spacing / (2.0 * speed)


def _check_cfl(problem: ViscousProblem, dt: float) -> None:
    limit = cfl_limit(problem)
    if dt > limit * (1 + 1e-12):
        raise CFLViolationError(f"dt={dt:.4g} exceeds the drift limit h/(2 max|v|)={limit:.4g}")


def _diagnostics_row(t: float, values: SampledField, **extra) -> dict:
    row = {"time": float(t), "mass": values.integral()}
    for p in DIAGNOSTIC_NORMS:
        row["linf" if np.isinf(p) else f"l{int(p)}"] = lp_norm(values, p)
    row.update(extra)
    return row


# ---------------------------------------------------------------------------
# IMEX integrator
# ---------------------------------------------------------------------------


def _imex_advance(problem: ViscousProblem, values: np.ndarray, t: float, dt: float, half: np.ndarray) -> np.ndarray:
    transport = TransportOperator(problem.grid, problem.v.at(t + dt / 2))
    values = ifftn_real(half * fftn(values))
    values = transport.flow(values, dt)
    return ifftn_real(half * fftn(values))


def imex_step(state: SampledField, t: float, dt: float, problem: ViscousProblem) -> SampledField:
    """One step E_{dt/2} exp(dt D_{v(t+dt/2)}) E_{dt/2} with E_tau = exp(-tau (a + eps|k|^2))."""
    require_same_grid(state, problem.theta0)
    _check_cfl(problem, dt)
    half = np.exp(-0.5 * dt * problem.decay)
    return state.with_values(_imex_advance(problem, state.values, t, dt, half), time=t + dt)


def imex_solve(problem: ViscousProblem, config: SolverConfig) -> TrajectorySolution:
    steps = max(1, math.ceil(problem.horizon / config.dt - 1e-9))
    dt = problem.horizon / steps
    _check_cfl(problem, dt)
    half = np.exp(-0.5 * dt * problem.decay)
    theta = problem.theta0.with_values(problem.theta0.values, time=0.0)
    times, fields, rows = [0.0], [theta], [_diagnostics_row(0.0, theta, iterations=0, residual=0.0)]
    values = theta.values
    for i in range(steps):
        t = i * dt
        values = _imex_advance(problem, values, t, dt, half)
        if (i + 1) % config.store_every == 0 or i + 1 == steps:
            t_next = (i + 1) * dt
            snapshot = theta.with_values(values, time=t_next)
            times.append(t_next)
            fields.append(snapshot)
            rows.append(_diagnostics_row(t_next, snapshot, iterations=0, residual=0.0))
    heuristic = problem.epsilon_visc == 0
    if heuristic:
        logger.warning("IMEX run at zero viscosity: result is heuristic")
    logger.info("IMEX solve: %d steps of dt=%.4g to T=%.4g", steps, dt, problem.horizon)
    meta = {"scheme": "imex-spectral", "dt": dt, "steps": steps, "heuristic": heuristic, "problem": problem.describe()}
    return TrajectorySolution(np.asarray(times), fields, pd.DataFrame(rows), pd.DataFrame(), meta)


# ---------------------------------------------------------------------------
# Picard iteration of the Duhamel map
# ---------------------------------------------------------------------------


def contraction_shape(problem: ViscousProblem, Tprime: float) -> float:
    """C0 / C: the bracket of powers of T' and eps."""
    eps = problem.epsilon_visc
    if eps <= 0:
        raise PreconditionError("the contraction constant needs eps > 0")
    n = problem.grid.n
    total = 0.0
    if not problem.v.is_zero:
        total += Tprime**0.5 / eps**0.5 * eps ** (-n / problem.drift_params.q) * problem.drift_norm
    kernel = problem.kernel
    if kernel is not None:
        total += Tprime ** (1 - kernel.alpha / 2) / eps ** (kernel.alpha / 2)
        total += Tprime ** (1 - kernel.delta / 2) / eps ** (kernel.delta / 2)
    return float(total)


def _window_transports(problem: ViscousProblem, t0: float, tau: float, m: int) -> list[TransportOperator]:
    if problem.v.steady:
        return [TransportOperator(problem.grid, problem.v.components[0])] * m
    return [TransportOperator(problem.grid, problem.v.at(t0 + (j + 0.5) * tau)) for j in range(m)]


def _duhamel_integral(
    problem: ViscousProblem, nodes: Sequence[np.ndarray], tau: float, transports: Sequence[TransportOperator]
) -> list[np.ndarray]:
    """int_0^{t_i} e^{eps (t_i - s) Laplace} (D theta - L theta)(s) ds by the composite midpoint rule."""
    heat = np.exp(-problem.epsilon_visc * tau * problem.grid.k_squared)
    heat_half = np.exp(-0.5 * problem.epsilon_visc * tau * problem.grid.k_squared)
    symbol = problem.symbol.values
    acc = np.zeros(problem.grid.shape, dtype=complex)
    out = [np.zeros(problem.grid.shape)]
    for j, transport in enumerate(transports):
        mid = 0.5 * (nodes[j] + nodes[j + 1])
        source = fftn(transport(mid)) - symbol * fftn(mid)
        acc = heat * acc + tau * heat_half * source
        out.append(ifftn_real(acc))
    return out


def _sequence_norm(nodes: Sequence[np.ndarray], p: float, grid: Grid) -> float:
    return max(lp_array(x, p, grid) for x in nodes)


def _window_layout(Tprime: float, config: SolverConfig) -> tuple[int, float]:
    m = max(config.min_window_nodes, math.ceil(Tprime / config.dt - 1e-9))
    return m, Tprime / m


_CALIBRATION_CACHE: dict[tuple, float] = {}


def calibrate_prefactor(problem: ViscousProblem, config: Optional[SolverConfig] = None) -> float:
    """Fit C so that C * shape(T') dominates the measured Lipschitz constant of the Duhamel map.

    The linear part is power-iterated on random fields over a dyadic ladder of
    windows, placed at several starts when the drift is unsteady; the largest
    ratio to the shape is scaled by the margin and frozen for the problem.
    """
    config = config or SolverConfig()
    key = (
        None if problem.kernel is None else problem.kernel.identifier,
        problem.v.digest(),
        problem.epsilon_visc,
        tuple(problem.grid.describe().values()),
        problem.horizon,
        config.dt,
        config.min_window_nodes,
        config.norm_p,
    )
    if key in _CALIBRATION_CACHE:
        return _CALIBRATION_CACHE[key]
    grid = problem.grid
    rng = np.random.default_rng(0)
    worst = 0.0
    for j in range(CALIBRATION_PROBES):
        Tprime = problem.horizon / 2**j
        shape = contraction_shape(problem, Tprime)
        if shape == 0:
            continue
        m, tau = _window_layout(Tprime, config)
        starts = [0.0] if problem.v.steady else np.unique(np.linspace(0.0, problem.horizon - Tprime, CALIBRATION_STARTS))
        for t0 in starts:
            transports = _window_transports(problem, float(t0), tau, m)
            nodes = [rng.standard_normal(grid.shape) for _ in range(m + 1)]
            size = _sequence_norm(nodes, config.norm_p, grid)
            lipschitz = 0.0
            for _ in range(CALIBRATION_POWER_ITERS):
                image = _duhamel_integral(problem, nodes, tau, transports)
                image_size = _sequence_norm(image, config.norm_p, grid)
                if image_size == 0:
                    break
                lipschitz = max(lipschitz, image_size / size)
                nodes = [x / image_size for x in image]
                size = 1.0
            worst = max(worst, lipschitz / shape)
            logger.debug("Calibration window T'=%.4g at t=%.4g: Lipschitz %.4g, shape %.4g", Tprime, t0, lipschitz, shape)
    prefactor = CALIBRATION_MARGIN * worst
    _CALIBRATION_CACHE[key] = prefactor
    logger.info("Calibrated contraction prefactor C=%.4g", prefactor)
    return prefactor


def contraction_constant(problem: ViscousProblem, Tprime: float, prefactor: Optional[float] = None) -> float:
    """C0(T') = C (T'^{1/2} eps^{-1/2 - n/q} ||v|| + T'^{1-alpha/2} eps^{-alpha/2} + T'^{1-delta/2} eps^{-delta/2})."""
    if Tprime < 0:
        raise ConfigurationError(f"window length must be >= 0, got {Tprime}")
    C = calibrate_prefactor(problem) if prefactor is None else prefactor
    return C * contraction_shape(problem, Tprime)


def local_window(
    problem: ViscousProblem,
    prefactor: float,
    target: float = SOLVER_DEFAULTS["contraction_target"],
    upper: Optional[float] = None,
    minimum: float = 0.0,
) -> float:
    """Largest T' <= upper with C0(T') <= target."""
    upper = problem.horizon if upper is None else upper

    def excess(T: float) -> float:
        return contraction_constant(problem, T, prefactor) - target

    if excess(upper) <= 0:
        return upper
    root = brentq(excess, 0.0, upper, xtol=1e-14 * upper, rtol=1e-14)
    Tprime = root * (1 - 1e-9)
    if Tprime < minimum:
        raise WindowDegenerateError(f"local window {Tprime:.4g} is shorter than the time step {minimum:.4g}")
    return Tprime


def _picard_window(
    problem: ViscousProblem, start: np.ndarray, t0: float, Tprime: float, config: SolverConfig
) -> tuple[list[np.ndarray], float, list[float]]:
    m, tau = _window_layout(Tprime, config)
    grid = problem.grid
    heat = np.exp(-problem.epsilon_visc * tau * grid.k_squared)
    free, spectrum = [start], fftn(start)
    for _ in range(m):
        spectrum = heat * spectrum
        free.append(ifftn_real(spectrum))
    transports = _window_transports(problem, t0, tau, m)
    nodes = list(free)
    history: list[float] = []
    for iteration in range(1, config.max_iters + 1):
        integral = _duhamel_integral(problem, nodes, tau, transports)
        updated = [f + g for f, g in zip(free, integral)]
        residual = _sequence_norm([a - b for a, b in zip(updated, nodes)], config.norm_p, grid)
        history.append(residual)
        nodes = updated
        if residual < config.picard_tol:
            return nodes, tau, history
    raise PicardDivergenceError(f"Picard window at t={t0:.4g} did not converge", history[-1], config.max_iters)


def picard_solve(problem: ViscousProblem, config: SolverConfig) -> TrajectorySolution:
    """Iterate the Duhamel map on chained local windows up to the horizon."""
    if problem.epsilon_visc <= 0:
        raise PreconditionError("the Picard path needs eps > 0; use the IMEX scheme at zero viscosity")
    prefactor = calibrate_prefactor(problem, config)
    theta = problem.theta0.with_values(problem.theta0.values, time=0.0)
    times, fields = [0.0], [theta]
    rows = [_diagnostics_row(0.0, theta, iterations=0, residual=0.0)]
    window_rows = []
    t, state, counter = 0.0, theta.values, 0
    T = problem.horizon
    while T - t > 1e-12 * T:
        remaining = T - t
        Tprime = local_window(
            problem, prefactor, config.contraction_target, upper=remaining, minimum=min(config.dt, remaining)
        )
        nodes, tau, history = _picard_window(problem, state, t, Tprime, config)
        window_rows.append({
            "start": t,
            "length": Tprime,
            "nodes": len(nodes) - 1,
            "iterations": len(history),
            "residual": history[-1],
            "contraction": contraction_constant(problem, Tprime, prefactor),
            "residual_history": history,
        })
        for i, values in enumerate(nodes[1:], start=1):
            counter += 1
            last = i == len(nodes) - 1 and T - (t + Tprime) <= 1e-12 * T
            if counter % config.store_every == 0 or last:
                ti = t + i * tau
                snapshot = theta.with_values(values, time=ti)
                times.append(ti)
                fields.append(snapshot)
                rows.append(_diagnostics_row(ti, snapshot, iterations=len(history), residual=history[-1]))
        state = nodes[-1]
        t += Tprime
        logger.debug("Picard window [%.4g, %.4g]: %d iterations", t - Tprime, t, len(history))
    logger.info("Picard solve: %d window(s) to T=%.4g with C=%.4g", len(window_rows), T, prefactor)
    meta = {"scheme": "picard-duhamel", "prefactor": prefactor, "heuristic": False, "problem": problem.describe()}
    return TrajectorySolution(np.asarray(times), fields, pd.DataFrame(rows), pd.DataFrame(window_rows), meta)


def solve(problem: ViscousProblem, config: SolverConfig) -> TrajectorySolution:
    if config.scheme == "picard-duhamel":
        return picard_solve(problem, config)
    return imex_solve(problem, config)


# ---------------------------------------------------------------------------
# Dual problem and studies
# ---------------------------------------------------------------------------


def dual_problem(
    v: VelocityField,
    kernel: Optional[LevyKernel],
    psi0: SampledField,
    t_final: float,
    epsilon_visc: float = 0.0,
) -> ViscousProblem:
    """Problem whose forward run is the backward dual of the drift ``v`` on [0, t_final]."""
    reversed_drift = v.reversed(t_final).scaled(-1.0)
    return ViscousProblem(kernel, reversed_drift, epsilon_visc, psi0, t_final)


def backward_dual_solve(
    v: VelocityField,
    kernel: Optional[LevyKernel],
    psi0: SampledField,
    t_final: float,
    config: Optional[SolverConfig] = None,
    epsilon_visc: float = 0.0,
) -> TrajectorySolution:
    """Solve d/ds psi = -div(v(t - s) psi) - L psi (+ eps Laplace psi) on [0, t_final]."""
    config = config or SolverConfig()
    problem = dual_problem(v, kernel, psi0, t_final, epsilon_visc)
    if epsilon_visc == 0 and config.scheme == "picard-duhamel":
        config = dataclasses.replace(config, scheme="imex-spectral")
    traj = solve(problem, config)
    traj.meta.update({"direction": "backward", "forward_drift_digest": v.digest()})
    return traj


def dissipation_balance(traj: TrajectorySolution, problem: ViscousProblem) -> pd.DataFrame:
    """||theta0||^2 - ||theta(t)||^2 against 2 int (<L theta, theta> + eps ||grad theta||^2) ds."""
    grid = traj.grid
    rates = []
    for f in traj.fields:
        spectrum = fftn(f.values)
        rates.append(float(np.sum(problem.decay * np.abs(spectrum) ** 2)) * grid.cell_volume / grid.points_per_dim**grid.n)
    rates = np.asarray(rates)
    increments = 0.5 * (rates[1:] + rates[:-1]) * np.diff(traj.times)
    dissipated = 2.0 * np.concatenate([[0.0], np.cumsum(increments)])
    energy = np.array([inner(f, f) for f in traj.fields])
    table = pd.DataFrame({"time": traj.times, "lhs": energy[0] - energy, "rhs": dissipated})
    table["gap"] = table["lhs"] - table["rhs"]
    return table


@dataclass
class DependenceReport:
    ratio: float
    bound: float
    window: float
    p: float
    table: pd.DataFrame

    @property
    def passed(self) -> bool:
        return self.ratio <= self.bound * (1 + 1e-9)


def continuous_dependence(
    problem: ViscousProblem, perturbation: SampledField, config: SolverConfig, p: float = 2.0
) -> DependenceReport:
    """Solve from theta0 and theta0 + perturbation on one local window and compare with the factor 2."""
    require_same_grid(problem.theta0, perturbation)
    size = lp_norm(perturbation, p)
    if size == 0:
        raise ConfigurationError("perturbation must be non-zero")
    prefactor = calibrate_prefactor(problem, config)
    Tprime = local_window(problem, prefactor, config.contraction_target, minimum=min(config.dt, problem.horizon))
    config = dataclasses.replace(config, scheme="picard-duhamel")
    base = picard_solve(problem.with_initial(problem.theta0, Tprime), config)
    moved = picard_solve(problem.with_initial(problem.theta0.with_values(problem.theta0.values + perturbation.values), Tprime), config)
    gaps = [lp_array(a.values - b.values, p, problem.grid) for a, b in zip(base.fields, moved.fields)]
    table = pd.DataFrame({"time": base.times, "gap": gaps, "initial_gap": size})
    bound = 1.0 / (1.0 - config.contraction_target)
    return DependenceReport(ratio=max(gaps) / size, bound=bound, window=Tprime, p=p, table=table)


@dataclass
class ViscosityReport:
    table: pd.DataFrame
    limit: SampledField
    monotone: bool
    empirical: bool = True

    def to_dict(self) -> dict:
        return {"sweep": self.table.to_dict(orient="records"), "monotone": self.monotone, "empirical": self.empirical}


def vanishing_viscosity(problem: ViscousProblem, eps_list: Sequence[float], config: SolverConfig) -> ViscosityReport:
    """Solve for each viscosity (descending) and report the Cauchy trend of the final fields."""
    eps_list = [float(e) for e in eps_list]
    if len(eps_list) < MIN_VISCOSITY_RUNS:
        raise ConfigurationError(f"vanishing viscosity needs at least {MIN_VISCOSITY_RUNS} values")
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])) or eps_list[-1] < 0:
        raise ConfigurationError("viscosity list must be strictly descending and non-negative")
    floor = MOLLIFIER_FLOOR_CELLS * problem.grid.spacing
    finals, rows = [], []
    for eps in eps_list:
        width = max(eps, floor)
        drift = problem.v if problem.v.is_zero else mollify(problem.v, MollifierPair(width))
        run = dataclasses.replace(problem, v=drift, epsilon_visc=eps)
        run_config = config if eps > 0 else dataclasses.replace(config, scheme="imex-spectral")
        finals.append(solve(run, run_config).final)
        rows.append({"epsilon": eps, "mollifier_width": width, "clamped": width > eps})
    for i, row in enumerate(rows):
        nxt = finals[i + 1] if i + 1 < len(finals) else None
        row["distance_to_next"] = np.nan if nxt is None else lp_array(finals[i].values - nxt.values, 2, problem.grid)
        row["distance_to_limit"] = lp_array(finals[i].values - finals[-1].values, 2, problem.grid)
    table = pd.DataFrame(rows)
    steps = table["distance_to_next"].dropna().to_numpy()
    monotone = bool(np.all(np.diff(steps) <= 1e-14 * max(steps.max(initial=0.0), 1.0)))
    logger.info("Vanishing viscosity over %s: monotone=%s", eps_list, monotone)
    return ViscosityReport(table, finals[-1], monotone)


def export_trajectory(traj: TrajectorySolution, directory: Path, stem: str = "trajectory") -> dict:
    """Write the stored fields as one binary and the diagnostics as JSON records."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    field_path = FieldStack(traj.grid, list(traj.fields)).save(directory / f"{stem}.bin")
    diag_path = directory / f"{stem}.diagnostics.json"
    traj.diagnostics.to_json(diag_path, orient="records", indent=2, double_precision=15)
    paths = {"fields": str(field_path), "diagnostics": str(diag_path)}
    if len(traj.windows):
        window_path = directory / f"{stem}.windows.json"
        traj.windows.to_json(window_path, orient="records", indent=2, double_precision=15)
        paths["windows"] = str(window_path)
    return paths
