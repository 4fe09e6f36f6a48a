"""Molecules, the constants of their small-time deformation, and traced evolutions.

A molecule of size r around x0 satisfies

    int |psi| |x - x0|^omega <= (zeta r)^(omega - gamma)     (concentration)
    ||psi||_inf <= (zeta r)^-(n + gamma)                      (height)
    int psi = 0                                               (moment, r < 1)

Under the backward dual flow these bounds deform into the same shapes with
(zeta r)^alpha replaced by (zeta r)^alpha + K s, provided K is small enough.
``compute_constants`` searches (zeta, nu) until every exponent that drives K
is negative, and ``track_deformation`` replays the iteration numerically.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy import special

from src.components.drift import VelocityField
from src.components.grid import Grid, SampledField, apply_multiplier, fftn
from src.components.levy import LevyKernel, ball_volume, tabulate_symbol
from src.components.solver import SolverConfig, dual_problem, imex_step
from src.components.spaces import MorreyParams, VectorSlice, lp_array, morrey_norm
from src.components.tables import write_table
from src.components.verifiers import Certificate, input_digest, make_certificate
from src.config import (
    AMPLITUDE_SATURATION,
    CALIBRATION_MARGIN,
    CENTER_STEPS,
    CORONA_RATIO,
    EPS_STEP,
    ETA_PREFACTOR,
    MIN_MOLECULE_CELLS,
    MOMENT_TOL,
    NU1_RATIO,
    NU_LADDER,
    OVERSHOOT,
    P_FRACTION,
    SPLIT_TOL,
    VERIFIER_TOL,
    ZETA_LADDER,
)
from src.errors import (
    ConfigurationError,
    InfeasibleConstantsError,
    PreconditionError,
    ScheduleError,
    UnderResolvedError,
)

logger = logging.getLogger(__name__)

PROFILES = ("concentric", "dipole", "bump")
SCHEDULE_COLUMNS = ["step", "s_start", "increment", "s", "r_i", "size"]


# ---------------------------------------------------------------------------
# Regimes
# ---------------------------------------------------------------------------


@dataclass
class RegimeReport:
    branch: str
    holder_bound: float
    q_threshold: float
    admissible: bool
    violations: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def classify_regime(alpha: float, delta: float, gamma: float, omega: float, q: float, n: int = 2) -> RegimeReport:
    """Name the alpha < 1 or alpha > 1 branch and check its exponent orderings."""
    violations = []
    if alpha < 1:
        branch, holder_bound, q_threshold = "super-critical", delta, n / max(alpha - gamma, 1e-300)
        if not 0 < gamma < omega < delta < alpha < 1:
            violations.append("ordering 0 < gamma < omega < delta < alpha < 1")
    elif alpha > 1:
        branch, holder_bound, q_threshold = "sub-critical", 2.0 - alpha, n / max(1.0 - gamma, 1e-300)
        if not 0 < gamma < omega < 2.0 - alpha:
            violations.append("ordering 0 < gamma < omega < 2 - alpha")
        if not 1 < delta < alpha < 2:
            violations.append("ordering 1 < delta < alpha < 2")
    else:
        return RegimeReport("critical", float("nan"), float("nan"), False, ["alpha = 1 is not covered"])
    if not q > q_threshold:
        violations.append(f"q > {q_threshold:.6g}")
    return RegimeReport(branch, float(holder_bound), float(q_threshold), not violations, violations)


# ---------------------------------------------------------------------------
# Constants
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RegimeParams:
    """Inputs of the constant search."""

    alpha: float
    delta: float
    gamma: float
    omega_exp: float
    q: float
    n: int = 2
    mu: float = 1.0
    cbar1: float = 1.0
    eta_prefactor: float = ETA_PREFACTOR

    @classmethod
    def from_kernel(cls, kernel: LevyKernel, gamma: float, omega_exp: float, q: float, mu: float = 1.0) -> "RegimeParams":
        return cls(kernel.alpha, kernel.delta, gamma, omega_exp, q, kernel.n, mu, kernel.cbar1)


@dataclass(frozen=True)
class ExponentCertificate:
    name: str
    expression: str
    value: float
    sign: int

    @property
    def negative(self) -> bool:
        return self.sign < 0


def frakc_constant(n: int, alpha: float, omega: float) -> float:
    """Height-condition constant with the corona ratio fixed at 5."""
    v = ball_volume(n)
    rho = CORONA_RATIO
    return float((v * (rho**n - 1) - math.sqrt(2 * v) * rho ** (n - omega)) / (2 * rho ** (n + alpha)))


def lp_constant(n: int, omega: float, p: float) -> float:
    """C_p in ||psi||_p <= C_p (zeta r)^(-n + n/p - gamma)."""
    if np.isinf(p):
        return 1.0
    return float((2.0 * ball_volume(n) ** (omega / (n + omega))) ** (1.0 / p))


def epsilon_exponent(zeta: float, beta0: float, beta1: float, p_tilde: float, omega: float, n: int) -> float:
    """The growth exponent eps of the shifted annulus, positive when p_tilde (omega - 1) + n < 0."""
    A = p_tilde * (omega - 1.0) + n
    return float(np.log1p(-(zeta ** ((beta1 - beta0) * A))) / (A * beta0 * np.log(zeta)))


def _exponents(
    n: int,
    alpha: float,
    gamma: float,
    omega: float,
    q: float,
    q_bar: float,
    p: float,
    p_tilde: float,
    beta0: float,
    beta1: float,
    eps: float,
) -> list[ExponentCertificate]:
    if alpha < 1:
        e1 = (beta0 - 1) * (omega - alpha + n / p) + (1 - alpha) * (beta1 - beta0)
        e2 = (1 - beta0 * (1 + eps)) * (alpha - omega - n / p_tilde) + (beta1 - beta0 * (1 + eps)) * (1 - alpha)
        x1 = "(beta0-1)(omega-alpha+n/p)+(1-alpha)(beta1-beta0)"
        x2 = "(1-beta0(1+eps))(alpha-omega-n/p_tilde)+(beta1-beta0(1+eps))(1-alpha)"
    else:
        e1 = (beta0 - 1) * (omega - alpha + n) + (beta1 - beta0) * (1 - alpha + n / q)
        e2 = (
            beta1 * (1 - alpha + n / q)
            + beta0 * (1 + eps) * (omega - 1 + n / p_tilde)
            - (n / q + n / p_tilde)
            + alpha
            - omega
        )
        x1 = "(beta0-1)(omega-alpha+n)+(beta1-beta0)(1-alpha+n/q)"
        x2 = "beta1(1-alpha+n/q)+beta0(1+eps)(omega-1+n/p_tilde)-(n/q+n/p_tilde)+alpha-omega"
    e3 = (beta1 - 1) * (omega - alpha + n / q)
    e4 = (beta1 - 1) * (omega - alpha + n / q_bar)
    items = [
        ("drift_near", x1, e1),
        ("drift_annulus", x2, e2),
        ("drift_far", "(beta1-1)(omega-alpha+n/q)", e3),
        ("operator", "(beta1-1)(omega-alpha+n/q_bar)", e4),
    ]
    return [ExponentCertificate(name, expr, float(val), int(np.sign(val))) for name, expr, val in items]


@dataclass(frozen=True)
class ConstantBundle:
    n: int
    alpha: float
    delta: float
    gamma: float
    omega_exp: float
    mu: float
    q: float
    a: float
    nu: float
    nu1: float
    beta0: float
    beta1: float
    p: float
    p_tilde: float
    q_bar: float
    epsilon_exp: float
    frakc: float
    K_bound: float
    K_limit: float
    zeta_chosen: float
    cbar1: float
    eta_prefactor: float
    eta_scaled: float
    certificates: tuple[ExponentCertificate, ...] = ()

    @property
    def regime(self) -> str:
        return "super-critical" if self.alpha < 1 else "sub-critical"

    @property
    def drift_params(self) -> MorreyParams:
        return MorreyParams(q=self.q, a=self.a)

    def size(self, r: float, s: float) -> float:
        """(zeta r)^alpha + K s."""
        return (self.zeta_chosen * r) ** self.alpha + self.K_bound * s

    def rho(self, r: float) -> float:
        """Averaging radius zeta^beta1 r of the center ODE."""
        return self.zeta_chosen**self.beta1 * r

    def bounds(self, r: float, s: float = 0.0) -> dict:
        """Deformed concentration, height and L1 bounds after time s."""
        size = self.size(r, s)
        n, g, w, a = self.n, self.gamma, self.omega_exp, self.alpha
        return {
            "concentration": size ** ((w - g) / a),
            "height": size ** (-(n + g) / a),
            "l1": lp_constant(n, w, 1.0) * size ** (-g / a),
        }

    def recompute_certificates(self) -> list[ExponentCertificate]:
        eps = epsilon_exponent(self.zeta_chosen, self.beta0, self.beta1, self.p_tilde, self.omega_exp, self.n)
        return _exponents(
            self.n, self.alpha, self.gamma, self.omega_exp, self.q, self.q_bar, self.p, self.p_tilde, self.beta0, self.beta1, eps
        )

    def reverify(self) -> bool:
        """Re-evaluate every exponent at the stored parameters and compare with the stored signs."""
        fresh = {c.name: c for c in self.recompute_certificates()}
        ok = True
        for cert in self.certificates:
            again = fresh.get(cert.name)
            if again is None or again.sign != cert.sign or not math.isclose(again.value, cert.value, rel_tol=1e-9, abs_tol=1e-15):
                logger.warning("Exponent %s does not reproduce: stored %.6g, now %s", cert.name, cert.value, again)
                ok = False
        ok = ok and all(c.negative for c in self.certificates) and self.K_bound <= self.K_limit
        return ok

    def to_dict(self) -> dict:
        data = asdict(self)
        data["certificates"] = [asdict(c) for c in self.certificates]
        data["regime"] = self.regime
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "ConstantBundle":
        data = dict(data)
        data.pop("regime", None)
        certs = tuple(ExponentCertificate(**c) for c in data.pop("certificates", []))
        return cls(**data, certificates=certs)

    def save(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        return path

    @classmethod
    def load(cls, path: Path) -> "ConstantBundle":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _conj(p: float) -> float:
    if np.isinf(p):
        return 1.0
    return p / (p - 1.0)


def _pick_exponents(params: RegimeParams) -> tuple[float, float, float]:
    n, alpha, delta, omega = params.n, params.alpha, params.delta, params.omega_exp
    p_upper = n / (2.0 - alpha - omega)
    if p_upper <= 1:
        raise PreconditionError(f"no admissible p: n/(2 - alpha - omega) = {p_upper:.4g} <= 1")
    p = 1.0 + P_FRACTION * (p_upper - 1.0)
    p_tilde = OVERSHOOT * n / ((alpha if alpha < 1 else 1.0) - omega)
    q_bar = OVERSHOOT * n / (delta - omega)
    if alpha > 1 and 1.0 / p_tilde + 1.0 / params.q >= 1:
        raise PreconditionError(f"1/p_tilde + 1/q = {1 / p_tilde + 1 / params.q:.4g} leaves no room for z")
    return p, p_tilde, q_bar


def compute_constants(params: RegimeParams) -> ConstantBundle:
    """Pick p, p_tilde, q_bar and search (zeta, nu) until every exponent is negative and K is small."""
    regime = classify_regime(params.alpha, params.delta, params.gamma, params.omega_exp, params.q, params.n)
    if not regime.admissible:
        raise PreconditionError(f"{regime.branch} regime violated: {'; '.join(regime.violations)}")
    n, alpha, gamma, omega = params.n, params.alpha, params.gamma, params.omega_exp
    a = n + params.q * (1.0 - alpha)
    if a < 0:
        raise PreconditionError(f"Morrey index a = n + q(1 - alpha) = {a:.4g} is negative")
    frakc = frakc_constant(n, alpha, omega)
    if frakc <= 0:
        raise InfeasibleConstantsError(f"height constant is not positive ({frakc:.4g})", "frakc")
    K_limit = alpha / (n + gamma) * params.cbar1 * frakc
    p, p_tilde, q_bar = _pick_exponents(params)

    blocking = "ladder"
    for zeta in ZETA_LADDER:
        best = None
        for nu in NU_LADDER:
            nu1 = NU1_RATIO * nu if alpha > 1 else nu
            beta0, beta1 = 1.0 - nu, 1.0 + nu1
            eps = epsilon_exponent(zeta, beta0, beta1, p_tilde, omega, n)
            certs = _exponents(n, alpha, gamma, omega, params.q, q_bar, p, p_tilde, beta0, beta1, eps)
            positive = [c.name for c in certs if not c.negative]
            if positive:
                blocking = positive[0]
                continue
            eta_scaled = params.eta_prefactor * max(params.mu, 1.0) * sum(zeta**c.value for c in certs)
            K = 2 * alpha / (omega - gamma) * eta_scaled
            if K > K_limit:
                blocking = "K_limit"
                continue
            if best is None or K < best[0]:
                best = (K, nu, nu1, beta0, beta1, eps, eta_scaled, certs)
        if best is not None:
            K, nu, nu1, beta0, beta1, eps, eta_scaled, certs = best
            logger.info("Constants: zeta=%g nu=%g K=%.4g (limit %.4g, c=%.4g)", zeta, nu, K, K_limit, frakc)
            return ConstantBundle(
                n=n,
                alpha=alpha,
                delta=params.delta,
                gamma=gamma,
                omega_exp=omega,
                mu=params.mu,
                q=params.q,
                a=a,
                nu=nu,
                nu1=nu1,
                beta0=beta0,
                beta1=beta1,
                p=p,
                p_tilde=p_tilde,
                q_bar=q_bar,
                epsilon_exp=eps,
                frakc=frakc,
                K_bound=K,
                K_limit=K_limit,
                zeta_chosen=zeta,
                cbar1=params.cbar1,
                eta_prefactor=params.eta_prefactor,
                eta_scaled=eta_scaled,
                certificates=tuple(certs),
            )
    raise InfeasibleConstantsError(f"no admissible zeta up to {ZETA_LADDER[-1]:g}; blocked by {blocking}", blocking)


# ---------------------------------------------------------------------------
# Molecules
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Molecule:
    r: float
    x0: tuple[float, ...]
    gamma: float
    omega_exp: float
    zeta: float
    field: SampledField
    profile: str = "concentric"

    @property
    def grid(self) -> Grid:
        return self.field.grid

    @property
    def is_small(self) -> bool:
        return self.r < 1

    @property
    def scale(self) -> float:
        return self.zeta * self.r

    def bounds(self) -> dict:
        n, g = self.grid.n, self.gamma
        return {
            "concentration": self.scale ** (self.omega_exp - g),
            "height": self.scale ** (-(n + g)),
            "l1": lp_constant(n, self.omega_exp, 1.0) * self.scale ** (-g),
        }

    def lp_bound(self, p: float) -> float:
        n = self.grid.n
        exponent = -n - self.gamma + (0.0 if np.isinf(p) else n / p)
        return lp_constant(n, self.omega_exp, p) * self.scale**exponent

    def with_values(self, values: np.ndarray) -> "Molecule":
        return Molecule(self.r, self.x0, self.gamma, self.omega_exp, self.zeta, self.field.with_values(values), self.profile)

    def describe(self) -> dict:
        return {
            "r": self.r,
            "x0": list(self.x0),
            "gamma": self.gamma,
            "omega_exp": self.omega_exp,
            "zeta": self.zeta,
            "profile": self.profile,
        }


def concentration_moment(values: np.ndarray, grid: Grid, center: Sequence[float], omega: float) -> float:
    """int |psi(x)| |x - center|^omega dx on the torus."""
    return float(np.sum(np.abs(values) * grid.torus_distance(center) ** omega) * grid.cell_volume)


def _gaussian(grid: Grid, center: Sequence[float], width: float) -> np.ndarray:
    return np.exp(-grid.torus_distance(center) ** 2 / (2.0 * width**2))


def _profile(grid: Grid, center: Sequence[float], scale: float, profile: str) -> np.ndarray:
    if profile == "concentric":
        inner_g = _gaussian(grid, center, scale / 4)
        outer_g = _gaussian(grid, center, scale / 2)
        return inner_g / inner_g.sum() - outer_g / outer_g.sum()
    envelope = _gaussian(grid, center, scale / 2)
    if profile == "bump":
        return envelope
    shift = grid.torus_displacement(center)[0]
    values = -shift / (scale / 2) ** 2 * envelope
    # the dipole is odd only up to grid placement
    return values - values.sum() * envelope / envelope.sum()


def make_molecule(
    r: float,
    x0: Sequence[float],
    gamma: float,
    omega_exp: float,
    zeta: float,
    grid: Grid,
    profile: str = "concentric",
) -> Molecule:
    """Profile at scale zeta r around x0, scaled to 90% of its binding bound."""
    if profile not in PROFILES:
        raise ConfigurationError(f"unknown molecule profile {profile!r}; expected one of {PROFILES}", "molecule.profile")
    if not (0 < gamma < omega_exp < 1):
        raise PreconditionError(f"molecule exponents need 0 < gamma < omega < 1, got gamma={gamma}, omega={omega_exp}")
    if not zeta > 1 or not r > 0:
        raise PreconditionError(f"molecule needs zeta > 1 and r > 0, got zeta={zeta}, r={r}")
    if len(x0) != grid.n:
        raise ConfigurationError(f"center has {len(x0)} coordinates, grid dimension is {grid.n}", "molecule.x0")
    if profile == "bump" and r < 1:
        raise PreconditionError("the positive bump profile only describes big molecules (r >= 1)")
    scale = zeta * r
    if scale < MIN_MOLECULE_CELLS * grid.spacing:
        raise UnderResolvedError(f"molecule scale zeta r = {scale:.4g} spans fewer than {MIN_MOLECULE_CELLS} cells")
    if scale > grid.side_length / 4:
        logger.warning("Molecule scale %.4g exceeds a quarter period; torus wrap affects its tails", scale)

    x0 = tuple(float(c) for c in x0)
    base = _profile(grid, x0, scale, profile)
    draft = Molecule(r, x0, gamma, omega_exp, zeta, SampledField(grid, base), profile)
    bounds = draft.bounds()
    measured = {
        "height": float(np.abs(base).max()),
        "concentration": concentration_moment(base, grid, x0, omega_exp),
        "l1": lp_array(base, 1.0, grid),
    }
    amplitude = AMPLITUDE_SATURATION * min(bounds[k] / measured[k] for k in bounds)
    molecule = draft.with_values(amplitude * base)
    report = check_molecule(molecule)
    if not report.passed:
        raise PreconditionError(f"constructed molecule fails {report.samples.loc[report.samples['margin'] < 0, 'label'].tolist()}")
    logger.debug("Molecule %s r=%g zeta=%g amplitude %.4g", profile, r, zeta, amplitude)
    return molecule


def check_molecule(m: Molecule, tol: float = VERIFIER_TOL, lp: Sequence[float] = (2.0,)) -> Certificate:
    """Concentration, height, moment and derived L^p conditions with their margins."""
    grid, values = m.grid, m.field.values
    bounds = m.bounds()
    l1 = lp_array(values, 1.0, grid)
    rows = [
        {"label": "concentration", "lhs": concentration_moment(values, grid, m.x0, m.omega_exp), "rhs": bounds["concentration"], "scale": None},
        {"label": "height", "lhs": float(np.abs(values).max()), "rhs": bounds["height"], "scale": None},
        {"label": "l1", "lhs": l1, "rhs": bounds["l1"], "scale": None},
    ]
    for p in lp:
        rows.append({"label": f"l{p:g}", "lhs": lp_array(values, p, grid), "rhs": m.lp_bound(p), "scale": None})
    if m.is_small:
        rows.append({"label": "moment", "lhs": abs(m.field.integral()), "rhs": MOMENT_TOL * l1, "scale": max(l1, 1e-300)})
    notes = {"size": "small" if m.is_small else "big", "profile": m.profile}
    return make_certificate("molecule", rows, tol, input_digest(values, params=m.describe()), notes=notes)


# ---------------------------------------------------------------------------
# Center transport
# ---------------------------------------------------------------------------


def _ball_multiplier(grid: Grid, rho: float) -> np.ndarray:
    """Fourier transform of the normalised indicator of the rho-ball."""
    nu = grid.n / 2.0
    s = grid.k_magnitude * rho
    safe = np.where(s > 0, s, 1.0)
    out = special.gamma(nu + 1) * (2.0 / safe) ** nu * special.jv(nu, safe)
    return np.where(s > 0, out, 1.0)


def ball_average(
    components: np.ndarray, grid: Grid, center: Sequence[float], rho: float, weights: Optional[np.ndarray] = None
) -> np.ndarray:
    """Average of the trigonometric interpolant of each component over B(center, rho)."""
    weights = _ball_multiplier(grid, rho) if weights is None else weights
    phase = np.exp(1j * sum(k * c for k, c in zip(grid.wavenumbers, center)))
    count = grid.points_per_dim**grid.n
    return np.array([float(np.sum(fftn(c) * weights * phase).real) / count for c in components])


def evolve_center(
    v: VelocityField,
    x0: Sequence[float],
    rho: float,
    interval: tuple[float, float],
    steps: int = CENTER_STEPS,
) -> tuple[np.ndarray, np.ndarray]:
    """RK4 for x'(s) = mean of v(s) over B(x(s), rho); returns (times, path) with path unwrapped."""
    grid = v.grid
    if rho < grid.spacing:
        raise UnderResolvedError(f"averaging radius {rho:.4g} is below one cell ({grid.spacing:.4g})")
    if steps < 1:
        raise ConfigurationError("center integration needs at least one step")
    s0, s1 = interval
    times = np.linspace(s0, s1, steps + 1)
    path = np.zeros((steps + 1, grid.n))
    path[0] = np.asarray(x0, dtype=float)
    weights = _ball_multiplier(grid, rho)

    def rate(s: float, x: np.ndarray) -> np.ndarray:
        return ball_average(v.at(s), grid, x, rho, weights)

    if v.is_zero:
        path[:] = path[0]
        return times, path
    for i in range(steps):
        s, x = times[i], path[i]
        ds = times[i + 1] - s
        k1 = rate(s, x)
        k2 = rate(s + ds / 2, x + ds / 2 * k1)
        k3 = rate(s + ds / 2, x + ds / 2 * k2)
        k4 = rate(s + ds, x + ds * k3)
        path[i + 1] = x + ds / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return times, path


# ---------------------------------------------------------------------------
# Concentration integrals
# ---------------------------------------------------------------------------


class ConcentrationIntegrals(NamedTuple):
    i1: float
    i2: float
    bound1: float
    bound2: float

    @property
    def ratio1(self) -> float:
        return self.i1 / self.bound1 if self.bound1 > 0 else float("nan")

    @property
    def ratio2(self) -> float:
        return self.i2 / self.bound2 if self.bound2 > 0 else float("nan")


def _drift_bound_shape(bundle: ConstantBundle, r: float, norms, mu_t: float) -> float:
    n, w, q, a, zeta = bundle.n, bundle.omega_exp, bundle.q, bundle.a, bundle.zeta_chosen
    near = zeta**bundle.beta0 * r
    annulus = zeta ** (bundle.beta0 * (1 + bundle.epsilon_exp)) * r
    far = zeta**bundle.beta1 * r
    pt = bundle.p_tilde
    if bundle.alpha < 1:
        inner_terms = near ** (w - 1 + n / bundle.p) * norms(_conj(bundle.p)) + annulus ** (w - 1 + n / pt) * norms(_conj(pt))
        return mu_t * (far ** ((a - n) / q) * inner_terms + far ** (w - 1 + a / q) * norms(_conj(q)))
    z = 1.0 / (1.0 - 1.0 / pt - 1.0 / q)
    terms = (
        near ** (w - 1 + n / _conj(q)) * norms(np.inf)
        + annulus ** (w - 1 + n / pt) * norms(z)
        + far ** (w - 1) * norms(_conj(q))
    )
    return mu_t * far ** (a / q) * terms


def concentration_integrals(
    psi: SampledField,
    v_t: Union[VectorSlice, np.ndarray],
    x_center: Sequence[float],
    bundle: ConstantBundle,
    kernel: LevyKernel,
    r: float,
    mu_t: Optional[float] = None,
) -> ConcentrationIntegrals:
    """Drift term I1 and operator term I2 of the concentration derivative with their bound shapes."""
    if kernel.alpha != bundle.alpha or kernel.n != bundle.n:
        raise PreconditionError(f"bundle regime (alpha={bundle.alpha}, n={bundle.n}) does not match kernel {kernel.identifier}")
    grid = psi.grid
    comps = v_t.components if isinstance(v_t, VectorSlice) else np.asarray(v_t, dtype=float)
    rho = bundle.rho(r)
    dist = grid.torus_distance(x_center)
    weight = np.maximum(dist, grid.spacing / 2) ** (bundle.omega_exp - 1)
    mean = ball_average(comps, grid, x_center, rho)
    deviation = np.sqrt(sum((c - m) ** 2 for c, m in zip(comps, mean)))
    mass = np.abs(psi.values)
    i1 = float(np.sum(weight * deviation * mass) * grid.cell_volume)

    omega_field = dist**bundle.omega_exp
    operator_omega = apply_multiplier(omega_field, tabulate_symbol(kernel, grid).values)
    i2 = float(np.sum(np.abs(operator_omega) * mass) * grid.cell_volume)

    if mu_t is None:
        mu_t = morrey_norm(VectorSlice(grid, comps), bundle.drift_params)

    def norms(p: float) -> float:
        return lp_array(psi.values, p, grid)

    bound1 = _drift_bound_shape(bundle, r, norms, mu_t)
    bound2 = rho ** (bundle.omega_exp - bundle.alpha + bundle.n / bundle.q_bar) * norms(_conj(bundle.q_bar))
    return ConcentrationIntegrals(i1, i2, float(bound1), float(bound2))


# ---------------------------------------------------------------------------
# Schedules and traces
# ---------------------------------------------------------------------------


def schedule_iterations(
    r: float, alpha: float, eps_step: float, T0: float, bundle: ConstantBundle
) -> pd.DataFrame:
    """Cumulative times s_i with increments eps_step r_i^alpha and growing radii r_i."""
    if not 0 < r < 1:
        raise ConfigurationError(f"schedules are built for small molecules, got r={r}", "molecule.r")
    if not T0 > 0 or not eps_step > 0:
        raise ConfigurationError("T0 and eps_step must be positive", "molecule.T0")
    zeta, K = bundle.zeta_chosen, bundle.K_bound
    schedule = pd.DataFrame(columns=SCHEDULE_COLUMNS, dtype=float)
    if (zeta * r) ** alpha >= T0 / 2:
        schedule.attrs["stop_reason"] = "maximum-principle"
        logger.info("Molecule r=%g already exceeds T0/2: empty schedule", r)
        return schedule
    cap = math.ceil(T0 / (eps_step * r**alpha) - 1e-9)
    rows, s_prev, reason = [], 0.0, "count"
    for i in range(cap):
        r_i = (r**alpha + K * s_prev / zeta**alpha) ** (1.0 / alpha)
        increment = eps_step * r_i**alpha
        s = s_prev + increment
        size = (zeta * r) ** alpha + K * s
        rows.append({"step": i, "s_start": s_prev, "increment": increment, "s": s, "r_i": r_i, "size": size})
        s_prev = s
        if size >= T0 / 2:
            reason = "size"
            break
    schedule = pd.DataFrame(rows, columns=SCHEDULE_COLUMNS)
    schedule.attrs["stop_reason"] = reason
    logger.info("Schedule for r=%g: %d step(s) to s=%.4g (stopped by %s)", r, len(schedule), s_prev, reason)
    return schedule


@dataclass
class MoleculeTrace:
    """Measured quantities and deformed bounds at every schedule time."""

    table: pd.DataFrame
    fields: list[SampledField]
    gamma: float
    bundle: ConstantBundle
    meta: dict = field(default_factory=dict)

    QUANTITIES = ("moment", "sup", "l1")

    def margins(self) -> pd.DataFrame:
        out = pd.DataFrame({"s": self.table["s"]})
        for q in self.QUANTITIES:
            bound = self.table[f"{q}_bound"]
            out[q] = (bound - self.table[q]) / bound
        return out

    def verdicts(self, tol: float = VERIFIER_TOL) -> dict:
        margins = self.margins()
        return {q: bool((margins[q] >= -tol).all()) for q in self.QUANTITIES}

    @property
    def passed(self) -> bool:
        return all(self.verdicts().values())

    @property
    def final_l1(self) -> float:
        return float(self.table["l1"].iloc[-1])

    def to_certificate(self, tol: float = VERIFIER_TOL) -> Certificate:
        rows = []
        for _, row in self.table.iterrows():
            for q in self.QUANTITIES:
                rows.append({"label": f"{q}@s={row['s']:.6g}", "lhs": row[q], "rhs": row[f"{q}_bound"], "scale": None})
        digest = input_digest(*(f.values for f in self.fields), params=self.meta.get("molecule", {}))
        return make_certificate("molecule_trace", rows, tol, digest, constants={"K": self.bundle.K_bound}, notes=dict(self.meta))


def _measure(values: np.ndarray, grid: Grid, center: Sequence[float], omega: float) -> dict:
    return {
        "moment": concentration_moment(values, grid, center, omega),
        "sup": float(np.abs(values).max()),
        "l1": lp_array(values, 1.0, grid),
    }


def _check_schedule(schedule: pd.DataFrame, alpha: float, eps_step: float) -> None:
    if schedule.empty:
        raise ScheduleError("empty schedule: the molecule is already beyond the iteration threshold")
    starts = schedule["s_start"].to_numpy(dtype=float)
    ends = schedule["s"].to_numpy(dtype=float)
    if abs(starts[0]) > 1e-15 or np.any(np.abs(starts[1:] - ends[:-1]) > 1e-12 * max(ends[-1], 1.0)):
        raise ScheduleError("schedule intervals must start at 0 and be contiguous")
    limits = eps_step * schedule["r_i"].to_numpy(dtype=float) ** alpha
    too_long = np.flatnonzero(ends - starts > limits * (1 + 1e-9))
    if too_long.size:
        i = int(too_long[0])
        raise ScheduleError(f"step {i} has length {ends[i] - starts[i]:.4g} > eps_step r_i^alpha = {limits[i]:.4g}")


def track_deformation(
    psi0: Molecule,
    v: VelocityField,
    kernel: LevyKernel,
    bundle: ConstantBundle,
    schedule: pd.DataFrame,
    config: Optional[SolverConfig] = None,
    eps_step: float = EPS_STEP,
    split: bool = False,
) -> MoleculeTrace:
    """Co-evolve the molecule under the dual flow and its center under the averaged drift."""
    if not psi0.is_small:
        raise PreconditionError("deformation tracking is defined for small molecules (r < 1)")
    if kernel.alpha != bundle.alpha:
        raise PreconditionError(f"bundle alpha {bundle.alpha} does not match kernel alpha {kernel.alpha}")
    _check_schedule(schedule, kernel.alpha, eps_step)
    config = config or SolverConfig()
    grid = psi0.grid
    horizon = float(schedule["s"].iloc[-1])
    problem = dual_problem(v, kernel, psi0.field, horizon)
    flow = v.reversed(horizon)

    mu = v.morrey_norm(bundle.drift_params)

    def record(step: int, s: float, r_i: float, center: np.ndarray, current: SampledField) -> dict:
        bounds = bundle.bounds(psi0.r, s)
        row = {"step": step, "s": s, "r_i": r_i, "rho": bundle.rho(r_i)}
        row.update({f"center_{j}": float(c) for j, c in enumerate(center)})
        row.update(_measure(current.values, grid, center, psi0.omega_exp))
        row.update(concentration_integrals(current, flow.at(s), center, bundle, kernel, r_i, mu)._asdict())
        row.update({"moment_bound": bounds["concentration"], "sup_bound": bounds["height"], "l1_bound": bounds["l1"]})
        return row

    center = np.asarray(psi0.x0, dtype=float)
    state = psi0.field.with_values(psi0.field.values, time=0.0)
    parts = None
    if split:
        parts = [state.with_values(np.maximum(state.values, 0.0)), state.with_values(np.maximum(-state.values, 0.0))]
    rows = [record(0, 0.0, psi0.r, center, state)]
    if split:
        rows[0]["split_gap"] = 0.0
    fields = [state]
    for _, item in schedule.iterrows():
        s_start, s_end, r_i = float(item["s_start"]), float(item["s"]), float(item["r_i"])
        substeps = max(1, math.ceil((s_end - s_start) / config.dt - 1e-9))
        dt = (s_end - s_start) / substeps
        _, path = evolve_center(flow, center, bundle.rho(r_i), (s_start, s_end), steps=substeps)
        center = path[-1]
        for j in range(substeps):
            t = s_start + j * dt
            state = imex_step(state, t, dt, problem)
            if parts is not None:
                parts = [imex_step(part, t, dt, problem) for part in parts]
        row = record(int(item["step"]) + 1, s_end, r_i, center, state)
        if parts is not None:
            scale = max(float(np.abs(state.values).max()), 1e-300)
            row["split_gap"] = float(np.abs(state.values - (parts[0].values - parts[1].values)).max()) / scale
            if row["split_gap"] > SPLIT_TOL:
                logger.warning("Split evolution differs from the direct one by %.3g at s=%.4g", row["split_gap"], s_end)
        rows.append(row)
        fields.append(state)
    table = pd.DataFrame(rows)
    meta = {"molecule": psi0.describe(), "kernel": kernel.identifier, "drift_digest": v.digest(), "split": split}
    trace = MoleculeTrace(table, fields, psi0.gamma, bundle, meta)
    logger.info("Traced molecule over %d step(s): %s", len(schedule), trace.verdicts())
    return trace


def export_trace(trace: MoleculeTrace, directory: Path, stem: str = "molecule_trace") -> dict:
    """CSV of the trace with margins plus a JSON verdict file."""
    directory = Path(directory)
    table = trace.table.copy()
    for q, margin in trace.margins().drop(columns="s").items():
        table[f"{q}_margin"] = margin
    csv_path = write_table(table, directory / f"{stem}.csv", description="molecule deformation trace")
    verdict_path = directory / f"{stem}.verdicts.json"
    verdict_path.write_text(json.dumps({"verdicts": trace.verdicts(), "meta": trace.meta}, indent=2, sort_keys=True, default=str))
    return {"table": str(csv_path), "verdicts": str(verdict_path)}


# ---------------------------------------------------------------------------
# L1 control after T0
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class L1Control:
    constant: float
    gamma: float
    T0: float
    regime: str
    fitted_on: int

    def bound(self) -> float:
        return self.constant * self.T0 ** (-self.gamma)

    def to_dict(self) -> dict:
        return asdict(self)


def fit_l1_control(traces: Sequence[MoleculeTrace], T0: float, margin: float = CALIBRATION_MARGIN) -> L1Control:
    """Freeze C in ||psi(T0)||_1 <= C T0^-gamma from the final L1 of calibration traces."""
    if not traces:
        raise ConfigurationError("L1 control needs at least one trace")
    gammas = {t.gamma for t in traces}
    if len(gammas) != 1:
        raise ConfigurationError(f"traces mix Holder targets {sorted(gammas)}")
    gamma = gammas.pop()
    constant = margin * max(t.final_l1 * T0**gamma for t in traces)
    control = L1Control(float(constant), gamma, T0, traces[0].bundle.regime, len(traces))
    logger.info("Frozen L1 control C=%.4g over %d trace(s)", control.constant, control.fitted_on)
    return control


def certify_l1_control(trace: MoleculeTrace, T0: float, constant: float, tol: float = VERIFIER_TOL) -> Certificate:
    row = {"label": "l1_final", "lhs": trace.final_l1, "rhs": constant * T0 ** (-trace.gamma), "scale": None}
    digest = input_digest(trace.fields[-1].values, params={"T0": T0, "C": constant})
    return make_certificate("l1_control", [row], tol, digest, constants={"C": constant, "T0": T0})


# ---------------------------------------------------------------------------
# Concentration-derivative control
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConcentrationControl:
    """Frozen constants of I1 <= C1 bound1 and I2 <= C2 bound2."""

    drift: float
    operator: float
    fitted_on: int

    def to_dict(self) -> dict:
        return asdict(self)


def _worst_ratio(traces: Sequence[MoleculeTrace], value: str, bound: str) -> float:
    ratios = [
        float((t.table[value] / t.table[bound])[t.table[bound] > 0].max())
        for t in traces
        if (t.table[bound] > 0).any()
    ]
    return max(ratios, default=0.0)


def fit_concentration_control(traces: Sequence[MoleculeTrace], margin: float = CALIBRATION_MARGIN) -> ConcentrationControl:
    """Freeze the generic constants of the concentration-derivative bounds on calibration traces."""
    if not traces:
        raise ConfigurationError("concentration control needs at least one trace")
    missing = [c for c in ("i1", "i2", "bound1", "bound2") if c not in traces[0].table.columns]
    if missing:
        raise ConfigurationError(f"trace has no concentration columns {missing}")
    control = ConcentrationControl(
        margin * _worst_ratio(traces, "i1", "bound1"), margin * _worst_ratio(traces, "i2", "bound2"), len(traces)
    )
    logger.info("Frozen concentration constants C1=%.4g C2=%.4g", control.drift, control.operator)
    return control


def certify_concentration(trace: MoleculeTrace, control: ConcentrationControl, tol: float = VERIFIER_TOL) -> Certificate:
    rows = []
    for _, row in trace.table.iterrows():
        rows.append({"label": f"i1@s={row['s']:.6g}", "lhs": row["i1"], "rhs": control.drift * row["bound1"], "scale": None})
        rows.append({"label": f"i2@s={row['s']:.6g}", "lhs": row["i2"], "rhs": control.operator * row["bound2"], "scale": None})
    digest = input_digest(trace.table[["i1", "i2"]].to_numpy(), params=control.to_dict())
    return make_certificate("concentration", rows, tol, digest, constants=control.to_dict(), notes=dict(trace.meta))
