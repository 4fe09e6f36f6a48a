"""Holder regularity of solutions, measured on the grid and through molecule pairings.

Two estimates are compared. The direct one reads the grid Holder seminorm
of theta(t) on the field and on its 2x subsample and keeps the largest
exponent on which both resolutions agree. The dual one fits the decay of the
largest pairing |<theta(t), psi_r>| over a dyadic family of small molecules:
for theta in C^s and a molecule of L1 size (zeta r)^-gamma the pairing decays
like r^(s - gamma), so s is the fitted slope plus the family gamma.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy.stats import linregress

from src.components.grid import Grid, SampledField, fftn, ifftn_real, require_same_grid
from src.components.molecules import Molecule, check_molecule, lp_constant, make_molecule
from src.components.solver import SolverConfig, TrajectorySolution, ViscousProblem, backward_dual_solve
from src.components.spaces import holder_profile, holder_seminorm, inner, lp_norm
from src.components.tables import write_table
from src.components.verifiers import Certificate, input_digest, make_certificate
from src.config import (
    AGREEMENT_TOL,
    CENTER_STRIDE,
    FLAT_THRESHOLD,
    GAMMA_PROBE,
    MIN_FIT_R2,
    MIN_FIT_SCALES,
    MIN_MOLECULE_CELLS,
    MIN_POINTS_PER_DIM,
    STABILITY_TOL,
    TRANSFER_TOL,
    VERIFIER_TOL,
)
from src.errors import ConfigurationError, FitError, PreconditionError, UnderResolvedError

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Families and pairings
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MoleculeFamily:
    """Origin-centred templates on the dyadic ladder, largest first.

    Translating a template by a grid offset gives an exact copy on the torus,
    so one template per scale stands for every center of that scale.
    """

    members: tuple[Molecule, ...]
    stride: int = CENTER_STRIDE

    def __post_init__(self) -> None:
        if not self.members:
            raise ConfigurationError("a molecule family needs at least one member")
        require_same_grid(*(m.field for m in self.members))
        shared = {(m.gamma, m.omega_exp, m.zeta, m.profile) for m in self.members}
        if len(shared) != 1:
            raise ConfigurationError("family members must share gamma, omega, zeta and profile")
        if self.stride < 1:
            raise ConfigurationError(f"center stride must be >= 1, got {self.stride}", "holder.stride")

    @property
    def grid(self) -> Grid:
        return self.members[0].grid

    @property
    def scales(self) -> np.ndarray:
        return np.array([m.r for m in self.members])

    @property
    def gamma(self) -> float:
        return self.members[0].gamma

    @property
    def omega_exp(self) -> float:
        return self.members[0].omega_exp

    @property
    def zeta(self) -> float:
        return self.members[0].zeta

    @property
    def profile(self) -> str:
        return self.members[0].profile

    def centers(self) -> np.ndarray:
        """Coordinates of the subsampled centers, one row per center."""
        axis = np.arange(0, self.grid.points_per_dim, self.stride) * self.grid.spacing
        mesh = np.meshgrid(*([axis] * self.grid.n), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def certificates(self, tol: float = VERIFIER_TOL) -> list[Certificate]:
        return [check_molecule(m, tol) for m in self.members]

    def describe(self) -> dict:
        return {
            "scales": self.scales.tolist(),
            "gamma": self.gamma,
            "omega_exp": self.omega_exp,
            "zeta": self.zeta,
            "profile": self.profile,
            "stride": self.stride,
        }


def build_family(
    grid: Grid,
    gamma: float,
    omega_exp: float,
    zeta: float,
    profile: str = "dipole",
    stride: int = CENTER_STRIDE,
    r_max: Optional[float] = None,
) -> MoleculeFamily:
    """Scales r = 2^-j with 4 h <= zeta r <= L/4 (and r <= r_max when given)."""
    if not zeta > 1:
        raise PreconditionError(f"family needs zeta > 1, got {zeta}")
    lowest = MIN_MOLECULE_CELLS * grid.spacing
    highest = grid.side_length / 4
    radii = []
    j = 1
    while zeta * 2.0**-j >= lowest:
        r = 2.0**-j
        if zeta * r <= highest and (r_max is None or r <= r_max):
            radii.append(r)
        j += 1
    if not radii:
        raise UnderResolvedError(f"no dyadic molecule scale fits between {lowest:.4g} and {highest:.4g} for zeta={zeta}")
    origin = (0.0,) * grid.n
    members = tuple(make_molecule(r, origin, gamma, omega_exp, zeta, grid, profile) for r in radii)
    logger.info("Molecule family: %d %s scales from r=%g to r=%g", len(members), profile, radii[0], radii[-1])
    return MoleculeFamily(members, stride)


def duality_pairing(theta_t: SampledField, m: Molecule) -> float:
    """<theta(t), psi> as the grid inner product."""
    require_same_grid(theta_t, m.field)
    return inner(theta_t, m.field)


def pairing_map(theta_t: SampledField, m: Molecule, stride: int = 1) -> np.ndarray:
    """Pairings with every grid translate of ``m``; entry c pairs with psi(. - c)."""
    grid = require_same_grid(theta_t, m.field)
    correlation = ifftn_real(fftn(theta_t.values) * np.conj(fftn(m.field.values))) * grid.cell_volume
    return correlation[(slice(None, None, stride),) * grid.n]


# ---------------------------------------------------------------------------
# Exponent estimates
# ---------------------------------------------------------------------------


def _field_at(traj: TrajectorySolution, t: float) -> SampledField:
    idx = int(np.argmin(np.abs(traj.times - t)))
    if abs(traj.times[idx] - t) > 1e-9 * max(1.0, abs(t)):
        raise ConfigurationError(f"trajectory stores no field at t={t:g}; nearest is {traj.times[idx]:g}")
    return traj.fields[idx]


def _subsample(f: SampledField) -> SampledField:
    grid = f.grid
    if grid.points_per_dim // 2 < MIN_POINTS_PER_DIM:
        raise UnderResolvedError(f"{grid.points_per_dim} points per dimension leave no coarser grid to compare with")
    coarse = Grid(grid.n, grid.points_per_dim // 2, grid.side_length)
    return SampledField(coarse, f.values[(slice(None, None, 2),) * grid.n], f.time)


def direct_holder_exponent(
    f: SampledField, probe: Sequence[float] = GAMMA_PROBE, tol: float = STABILITY_TOL
) -> tuple[float, pd.DataFrame]:
    """Largest probe exponent up to which the seminorm agrees on the field and its 2x subsample."""
    coarse_field = _subsample(f)
    fine = holder_profile(f)
    coarse = holder_profile(coarse_field)
    rows = []
    for gamma in sorted(probe):
        a = holder_seminorm(f, gamma, fine)
        b = holder_seminorm(coarse_field, gamma, coarse)
        gap = abs(a - b) / a if a > 0 else 0.0
        rows.append({"gamma": gamma, "fine": a, "coarse": b, "relative_gap": gap, "stable": gap <= tol})
    table = pd.DataFrame(rows)
    # stability is lost for good once the grid scale dominates
    leading = table["stable"].astype(int).cumprod().astype(bool)
    value = float(table.loc[leading, "gamma"].max()) if leading.any() else 0.0
    return value, table


@dataclass
class HolderReport:
    time: float
    family_gamma: float
    gamma_dual: Optional[float]
    gamma_direct: float
    fit_r2: Optional[float]
    slope: Optional[float]
    regime_bound: Optional[float]
    verdict: str
    decay: pd.DataFrame
    stability: pd.DataFrame
    meta: dict = field(default_factory=dict)

    @property
    def regime_check(self) -> Optional[bool]:
        """Whether the family target lies below the admissible Holder bound."""
        if self.regime_bound is None:
            return None
        return bool(self.family_gamma < self.regime_bound)

    def to_dict(self) -> dict:
        return {
            "gamma_dual": self.gamma_dual,
            "gamma_direct": self.gamma_direct,
            "fit_r2": self.fit_r2,
            "regime_bound": self.regime_bound,
            "verdict": self.verdict,
            "regime_check": self.regime_check,
            "family_gamma": self.family_gamma,
            "slope": self.slope,
            "time": self.time,
            "meta": self.meta,
        }


def estimate_holder_exponent(
    traj: TrajectorySolution,
    family: MoleculeFamily,
    t: float,
    T0: float,
    regime_bound: Optional[float] = None,
    agreement: float = AGREEMENT_TOL,
) -> tuple[Optional[float], float, HolderReport]:
    """Dual and direct Holder exponents of theta(t) for t >= T0 > 0."""
    if not T0 > 0:
        raise ConfigurationError(f"T0 must be positive, got {T0}", "holder.T0")
    if t < T0:
        raise PreconditionError(f"Holder probe needs t >= T0, got t={t} < T0={T0}")
    theta = _field_at(traj, t)
    require_same_grid(theta, family.members[0].field)

    l1 = lp_norm(theta, 1.0)
    rows = []
    for m in family.members:
        pairings = pairing_map(theta, m, family.stride)
        rows.append({
            "r": m.r,
            "scale": m.scale,
            "max_pairing": float(np.max(np.abs(pairings))),
            "threshold": FLAT_THRESHOLD * l1 * float(np.max(np.abs(m.field.values))),
        })
    decay = pd.DataFrame(rows)
    gamma_direct, stability = direct_holder_exponent(theta)

    gamma_dual = fit_r2 = slope = None
    if bool((decay["max_pairing"] <= decay["threshold"]).all()):
        verdict = "flat"
    else:
        usable = decay[decay["max_pairing"] > decay["threshold"]]
        if len(usable) < MIN_FIT_SCALES:
            raise FitError(f"pairing decay has {len(usable)} usable scale(s); at least {MIN_FIT_SCALES} are needed")
        fit = linregress(np.log(usable["r"]), np.log(usable["max_pairing"]))
        slope, fit_r2 = float(fit.slope), float(fit.rvalue**2)
        if fit_r2 < MIN_FIT_R2:
            verdict = "noisy"
            logger.warning("Pairing decay fit R^2=%.3f below %.2f; no dual exponent reported", fit_r2, MIN_FIT_R2)
        else:
            gamma_dual = float(np.clip(slope + family.gamma, 0.0, 1.0))
            verdict = "agree" if abs(gamma_dual - gamma_direct) <= agreement else "disagree"

    report = HolderReport(
        time=float(theta.time if theta.time is not None else t),
        family_gamma=family.gamma,
        gamma_dual=gamma_dual,
        gamma_direct=gamma_direct,
        fit_r2=fit_r2,
        slope=slope,
        regime_bound=regime_bound,
        verdict=verdict,
        decay=decay,
        stability=stability,
        meta={"family": family.describe(), "T0": T0},
    )
    logger.info(
        "Holder probe at t=%g: dual=%s direct=%.3g (%s)",
        report.time,
        "n/a" if gamma_dual is None else f"{gamma_dual:.3g}",
        gamma_direct,
        verdict,
    )
    return gamma_dual, gamma_direct, report


def export_holder_report(report: HolderReport, directory: Path, stem: str = "holder") -> dict:
    directory = Path(directory)
    decay = write_table(report.decay, directory / f"{stem}_decay.csv", description="largest molecule pairing per scale")
    stability = write_table(report.stability, directory / f"{stem}_stability.csv", description="Holder seminorm on two resolutions")
    summary = directory / f"{stem}.json"
    summary.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True, default=str))
    return {"decay": str(decay), "stability": str(stability), "report": str(summary)}


# ---------------------------------------------------------------------------
# Pairing bounds
# ---------------------------------------------------------------------------


def verify_pairing_chain(
    traj: TrajectorySolution,
    problem: ViscousProblem,
    molecules: Sequence[Molecule],
    t: Optional[float] = None,
    config: Optional[SolverConfig] = None,
    tol: float = TRANSFER_TOL,
) -> Certificate:
    """|<theta(t), psi0>| <= ||theta0||_inf ||psi(t)||_1 with psi(t) from the backward dual run."""
    t = traj.horizon if t is None else t
    theta_t = _field_at(traj, t)
    sup0 = float(np.max(np.abs(traj.initial.values)))
    rows = []
    for m in molecules:
        require_same_grid(theta_t, m.field)
        back = backward_dual_solve(problem.v, problem.kernel, m.field, t, config, problem.epsilon_visc)
        rows.append({
            "label": f"r={m.r:g}@{','.join(f'{c:.4g}' for c in m.x0)}",
            "lhs": abs(inner(theta_t, m.field)),
            "rhs": sup0 * lp_norm(back.final, 1.0),
            "scale": None,
        })
    digest = input_digest(theta_t.values, *(m.field.values for m in molecules), params={"t": t, "tol": tol})
    return make_certificate("pairing_chain", rows, tol, digest, {"theta0_sup": sup0}, {"t": t})


def big_molecule_bound(theta0: SampledField, theta_t: SampledField, m: Molecule, tol: float = VERIFIER_TOL) -> Certificate:
    """For r >= 1: |<theta(t), psi>| <= ||theta0||_inf C r^-gamma by the maximum principle."""
    if m.is_small:
        raise PreconditionError(f"the maximum-principle shortcut needs r >= 1, got r={m.r}")
    grid = require_same_grid(theta0, theta_t, m.field)
    constant = lp_constant(grid.n, m.omega_exp, 1.0) * m.zeta ** (-m.gamma)
    sup0 = float(np.max(np.abs(theta0.values)))
    row = {
        "label": f"r={m.r:g}",
        "lhs": abs(inner(theta_t, m.field)),
        "rhs": sup0 * constant * m.r ** (-m.gamma),
        "scale": None,
    }
    digest = input_digest(theta0.values, theta_t.values, m.field.values, params=m.describe())
    return make_certificate("big_molecule", [row], tol, digest, {"C": constant, "theta0_sup": sup0})
