"""Pass/fail certificates for the a-priori estimates of the transport-diffusion flow.

Every certificate is a table of samples with columns ``label``, ``lhs``,
``rhs``, ``scale`` and ``margin = (rhs - lhs) / scale``; it fails iff some
margin falls below ``-tolerance``. Constants that a check needs are fitted on
calibration data first and frozen before certification.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd

from src.components.grid import Grid, SampledField, fftn, require_same_grid
from src.components.levy import (
    LevyKernel,
    LevySymbol,
    apply_operator,
    check_nondegeneracy,
    fractional_constant,
    tabulate_symbol,
)
from src.components.solver import DependenceReport, TrajectorySolution, ViscousProblem, dissipation_balance
from src.components.spaces import MorreyParams, besov_seminorm, inner, lp_norm
from src.config import BESOV_SLACK, SYMBOL_FIT_SLACK, TRANSFER_TOL, VERIFIER_TOL
from src.errors import ConfigurationMismatchError, PreconditionError

logger = logging.getLogger(__name__)

TINY = 1e-300
MAX_PRINCIPLE_NORMS = (1.0, 2.0, 4.0, np.inf)


@dataclass
class Certificate:
    name: str
    digest: str
    samples: pd.DataFrame
    tolerance: float
    constants: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        if self.samples.empty:
            return True
        return not bool((self.samples["margin"] < -self.tolerance).any())

    @property
    def worst_margin(self) -> float:
        return float(self.samples["margin"].min()) if len(self.samples) else float("nan")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "digest": self.digest,
            "verdict": "pass" if self.passed else "fail",
            "tolerance": self.tolerance,
            "worst_margin": self.worst_margin,
            "constants": self.constants,
            "notes": self.notes,
            "samples": self.samples.to_dict(orient="records"),
        }


def input_digest(*arrays: np.ndarray, params: Optional[dict] = None) -> str:
    """SHA-256 over the raw array bytes and the sorted JSON of ``params``."""
    h = hashlib.sha256()
    for arr in arrays:
        h.update(np.ascontiguousarray(np.asarray(arr, dtype=float)).tobytes())
    h.update(json.dumps(params or {}, sort_keys=True, default=str).encode())
    return h.hexdigest()


def make_certificate(
    name: str,
    rows: Iterable[dict],
    tolerance: float,
    digest: str,
    constants: Optional[dict] = None,
    notes: Optional[dict] = None,
) -> Certificate:
    samples = pd.DataFrame(list(rows), columns=["label", "lhs", "rhs", "scale"])
    if len(samples):
        default_scale = np.maximum(samples["rhs"].abs(), TINY)
        samples["scale"] = pd.to_numeric(samples["scale"]).fillna(default_scale)
        samples["margin"] = (samples["rhs"] - samples["lhs"]) / samples["scale"]
    else:
        samples["margin"] = pd.Series(dtype=float)
    cert = Certificate(name, digest, samples, tolerance, constants or {}, notes or {})
    level = logging.INFO if cert.passed else logging.WARNING
    logger.log(level, "Certificate %s: %s (worst margin %.3g)", name, "pass" if cert.passed else "fail", cert.worst_margin)
    return cert


def write_certificate(cert: Certificate, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(cert.to_dict(), indent=2, sort_keys=True, default=float))
    tmp.replace(path)
    return path


def _trajectory_digest(traj: TrajectorySolution, **params) -> str:
    return input_digest(traj.times, *(f.values for f in traj.fields), params=params)


def _norm_label(p: float) -> str:
    return "inf" if np.isinf(p) else f"{p:g}"


# ---------------------------------------------------------------------------
# Maximum principle and positivity
# ---------------------------------------------------------------------------


def verify_max_principle(
    traj: TrajectorySolution, p_list: Sequence[float] = MAX_PRINCIPLE_NORMS, tol: float = VERIFIER_TOL
) -> Certificate:
    """||theta(t_k)||_p <= ||theta0||_p and ||theta(t_k)||_p <= ||theta(t_{k-1})||_p for every stored step.

    The observed ratio max_k ||theta(t_k)||_inf / ||theta0||_inf is reported as ``linf_constant``.
    """
    rows, constants = [], {}
    for p in p_list:
        label = _norm_label(p)
        norms = traj.norms(p)
        initial = norms[0]
        if np.isinf(p):
            constants["linf_constant"] = float(norms.max() / initial) if initial > 0 else 1.0
        for t, value in zip(traj.times, norms):
            rows.append({"label": f"p={label},t={t:.6g}", "lhs": value, "rhs": initial, "scale": max(initial, TINY)})
        for t, prev, value in zip(traj.times[1:], norms[:-1], norms[1:]):
            rows.append({"label": f"p={label},step,t={t:.6g}", "lhs": value, "rhs": prev, "scale": max(prev, TINY)})
    notes = {"scheme": traj.meta.get("scheme"), "heuristic": traj.meta.get("heuristic", False)}
    digest = _trajectory_digest(traj, p_list=[_norm_label(p) for p in p_list], tol=tol)
    return make_certificate("max_principle", rows, tol, digest, constants, notes)


def positivity_regime_ok(kernel: Optional[LevyKernel], params: MorreyParams, n: int) -> bool:
    """For 1 < delta < alpha < 2 positivity is only claimed when q > n."""
    return kernel is None or kernel.alpha < 1 or params.q > n


def verify_positivity(
    traj: TrajectorySolution,
    M: float,
    tol: float = VERIFIER_TOL,
    kernel: Optional[LevyKernel] = None,
    drift_params: Optional[MorreyParams] = None,
) -> Certificate:
    """0 <= theta(t) <= M at every stored step, measured relative to M."""
    if not M > 0:
        raise PreconditionError(f"upper level M must be positive, got {M}")
    theta0 = traj.initial.values
    if theta0.min() < 0 or theta0.max() > M:
        raise PreconditionError(f"initial data leaves [0, M]: range [{theta0.min():.4g}, {theta0.max():.4g}], M={M:g}")
    if drift_params is not None and not positivity_regime_ok(kernel, drift_params, traj.grid.n):
        raise PreconditionError(f"alpha > 1 needs q > n for positivity, got q={drift_params.q}, n={traj.grid.n}")
    rows = []
    for t, f in zip(traj.times, traj.fields):
        rows.append({"label": f"lower,t={t:.6g}", "lhs": -float(f.values.min()), "rhs": 0.0, "scale": M})
        rows.append({"label": f"upper,t={t:.6g}", "lhs": float(f.values.max()), "rhs": M, "scale": M})
    digest = _trajectory_digest(traj, M=M, tol=tol)
    return make_certificate("positivity", rows, tol, digest, {"M": M})


def verify_mass_conservation(traj: TrajectorySolution, tol: float = 1e-10) -> Certificate:
    masses = traj.diagnostics["mass"].to_numpy()
    scale = max(abs(masses[0]), lp_norm(traj.initial, 1), TINY)
    rows = [
        {"label": f"t={t:.6g}", "lhs": abs(m - masses[0]), "rhs": 0.0, "scale": scale}
        for t, m in zip(traj.times, masses)
    ]
    return make_certificate("mass_conservation", rows, tol, _trajectory_digest(traj, tol=tol))


# ---------------------------------------------------------------------------
# Stroock-Varopoulos and Besov regularity
# ---------------------------------------------------------------------------


def _power(f: np.ndarray, exponent: float) -> np.ndarray:
    """sgn(f) |f|^exponent with sgn(0) = 0."""
    return np.sign(f) * np.abs(f) ** exponent


def stroock_varopoulos_terms(field: SampledField, symbol: LevySymbol, p: float) -> tuple[float, float]:
    """(<L|f|^{p/2}, |f|^{p/2}>, <L f, |f|^{p-1} sgn f>)."""
    half = field.with_values(np.abs(field.values) ** (p / 2))
    lhs = inner(apply_operator(half, symbol), half)
    rhs = inner(apply_operator(field, symbol), field.with_values(_power(field.values, p - 1)))
    return lhs, rhs


def verify_stroock_varopoulos(field: SampledField, symbol: LevySymbol, p: float, tol: float = VERIFIER_TOL) -> Certificate:
    """RHS >= 0 and c_p LHS <= RHS with c_p = 4(p-1)/p^2; the largest admissible constant is reported."""
    require_same_grid(field, symbol)
    if p < 2:
        raise PreconditionError(f"p must be >= 2, got {p}")
    if not np.any(field.values):
        raise PreconditionError("field is identically zero")
    lhs, rhs = stroock_varopoulos_terms(field, symbol, p)
    scale = max(abs(lhs), abs(rhs), TINY)
    c_p = 4 * (p - 1) / p**2
    rows = [
        {"label": "rhs_nonnegative", "lhs": -rhs, "rhs": 0.0, "scale": scale},
        {"label": "inequality", "lhs": c_p * lhs, "rhs": rhs, "scale": scale},
    ]
    constants = {"lhs": lhs, "rhs": rhs, "classical_constant": c_p, "admissible_constant": rhs / lhs if lhs > 0 else None}
    digest = input_digest(field.values, symbol.values, params={"p": p, "tol": tol})
    return make_certificate("stroock_varopoulos", rows, tol, digest, constants)


@dataclass(frozen=True)
class SymbolConstants:
    """Frozen constants of a(xi) <= A (|xi|^alpha + |xi|^delta) and |xi|^alpha <= Lam a(xi) + C_b."""

    upper: float
    lam: float
    offset: float
    fitted_on: int

    def to_dict(self) -> dict:
        return {"upper": self.upper, "lam": self.lam, "offset": self.offset, "fitted_on": self.fitted_on}


def _lattice_radii(grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """Distinct nonzero |m|^2 and a flat index of one representative each."""
    m2 = np.rint(sum(m**2 for m in grid.mode_indices)).astype(np.int64).ravel()
    unique, first = np.unique(m2, return_index=True)
    keep = unique > 0
    return np.sqrt(unique[keep]) * (2 * np.pi / grid.side_length), first[keep]


def fit_symbol_constants(kernel: LevyKernel, grid: Grid, slack: float = SYMBOL_FIT_SLACK) -> SymbolConstants:
    """Fit on the half-resolution lattice of the same torus, then widen by ``slack``."""
    coarse = Grid(n=grid.n, points_per_dim=max(grid.points_per_dim // 2, 8), side_length=grid.side_length)
    radii, index = _lattice_radii(coarse)
    a = tabulate_symbol(kernel, coarse).values.ravel()[index]
    upper = float(np.max(a / (radii**kernel.alpha + radii**kernel.delta)))
    lam = 1.0 / (kernel.amplitude * fractional_constant(kernel.n, kernel.alpha))
    offset = float(max(np.max(radii**kernel.alpha - lam * a), 0.0))
    return SymbolConstants(upper=upper * (1 + slack), lam=lam, offset=offset * (1 + slack), fitted_on=len(radii))


def verify_symbol_bounds(
    symbol: LevySymbol, kernel: LevyKernel, constants: Optional[SymbolConstants] = None, tol: float = VERIFIER_TOL
) -> Certificate:
    """Certify both symbol inequalities on every distinct lattice frequency with frozen constants."""
    constants = constants or fit_symbol_constants(kernel, symbol.grid)
    radii, index = _lattice_radii(symbol.grid)
    a = symbol.values.ravel()[index]
    rows = [{"label": "xi=0,upper", "lhs": float(symbol.values.ravel()[0]), "rhs": 0.0, "scale": 1.0}]
    for r, value in zip(radii, a):
        rows.append({
            "label": f"|xi|={r:.6g},upper",
            "lhs": value,
            "rhs": constants.upper * (r**kernel.alpha + r**kernel.delta),
            "scale": None,
        })
        rows.append({
            "label": f"|xi|={r:.6g},lower",
            "lhs": r**kernel.alpha,
            "rhs": constants.lam * value + constants.offset,
            "scale": None,
        })
    digest = input_digest(symbol.values, params={"kernel": kernel.describe(), **constants.to_dict(), "tol": tol})
    return make_certificate("symbol_bounds", rows, tol, digest, constants.to_dict())


@dataclass(frozen=True)
class BesovConstants:
    first: float
    second: float
    p: float
    corpus_size: int

    def to_dict(self) -> dict:
        return {"first": self.first, "second": self.second, "p": self.p, "corpus_size": self.corpus_size}


def besov_chain_terms(field: SampledField, symbol: LevySymbol, kernel: LevyKernel, p: float) -> tuple[float, float, float]:
    """(||f||^p_{B^{alpha/p}_{p,p}}, ||f^{p/2}||^2_{B^{alpha/2}_{2,2}}, ||f^{p/2}||_2^2 + int |f|^{p-2} f L f)."""
    g = field.with_values(_power(field.values, p / 2))
    first = besov_seminorm(field, kernel.alpha / p, p) ** p
    second = besov_seminorm(g, kernel.alpha / 2, 2) ** 2
    pairing = inner(apply_operator(field, symbol), field.with_values(_power(field.values, p - 1)))
    return first, second, inner(g, g) + pairing


def calibrate_besov_constants(
    corpus: Sequence[SampledField],
    kernel: LevyKernel,
    p: float,
    symbol_constants: Optional[SymbolConstants] = None,
    slack: float = BESOV_SLACK,
) -> BesovConstants:
    """First constant fitted on ``corpus``; second derived from the symbol lower bound."""
    if not corpus:
        raise PreconditionError("Besov calibration needs a non-empty corpus")
    grid = corpus[0].grid
    symbol = tabulate_symbol(kernel, grid)
    ratios = []
    for f in corpus:
        first, second, _ = besov_chain_terms(f, symbol, kernel, p)
        if second > 0:
            ratios.append(first / second)
    first_constant = (1 + slack) * max(ratios) if ratios else 1.0
    sc = symbol_constants or fit_symbol_constants(kernel, grid)
    second_constant = 2 * fractional_constant(grid.n, kernel.alpha) * max(sc.lam, sc.offset) * p**2 / (4 * (p - 1))
    logger.info("Besov constants p=%g: first %.4g (corpus %d), second %.4g", p, first_constant, len(corpus), second_constant)
    return BesovConstants(first_constant, second_constant, p, len(corpus))


def positive_negative_cross_term(field: SampledField, symbol: LevySymbol) -> float:
    """<f_+, L f_->, non-positive because f_+ and f_- have disjoint supports."""
    plus = field.with_values(np.maximum(field.values, 0.0))
    minus = field.with_values(np.maximum(-field.values, 0.0))
    return inner(plus, apply_operator(minus, symbol))


def verify_besov_regularity(
    field: SampledField, kernel: LevyKernel, p: float, constants: BesovConstants, tol: float = VERIFIER_TOL
) -> Certificate:
    """T1 <= C1 T2 and T2 <= C2 T3 with frozen constants."""
    if p < 2:
        raise PreconditionError(f"p must be >= 2, got {p}")
    if constants.p != p:
        raise PreconditionError(f"constants were calibrated for p={constants.p}, not p={p}")
    symbol = tabulate_symbol(kernel, field.grid)
    t1, t2, t3 = besov_chain_terms(field, symbol, kernel, p)
    rows = [
        {"label": "first", "lhs": t1, "rhs": constants.first * t2, "scale": max(t1, constants.first * t2, TINY)},
        {"label": "second", "lhs": t2, "rhs": constants.second * t3, "scale": max(t2, constants.second * t3, TINY)},
    ]
    notes = {"terms": [t1, t2, t3]}
    if p == 2 and field.values.min() < 0 < field.values.max():
        cross = positive_negative_cross_term(field, symbol)
        rows.append({"label": "cross_term", "lhs": cross, "rhs": 0.0, "scale": max(abs(t3), abs(cross), TINY)})
        notes["cross_term"] = cross
    digest = input_digest(field.values, params={"kernel": kernel.describe(), "p": p, **constants.to_dict()})
    return make_certificate("besov_regularity", rows, tol, digest, constants.to_dict(), notes)


# ---------------------------------------------------------------------------
# Duality, energy balance, continuous dependence
# ---------------------------------------------------------------------------


def _check_pair(forward: TrajectorySolution, backward: TrajectorySolution) -> None:
    require_same_grid(forward.initial, backward.initial)
    f_meta = forward.meta.get("problem", {})
    b_meta = backward.meta.get("problem", {})
    for key in ("kernel", "epsilon_visc", "horizon"):
        if f_meta.get(key) != b_meta.get(key):
            raise ConfigurationMismatchError(f"forward and backward runs differ in {key}")
    if backward.meta.get("forward_drift_digest") != f_meta.get("drift_digest"):
        raise ConfigurationMismatchError("backward run was not built from the forward drift")


def verify_transfer(
    forward: TrajectorySolution,
    backward: TrajectorySolution,
    tol: float = TRANSFER_TOL,
    fractions: Sequence[float] = (0.25, 0.5, 0.75),
) -> Certificate:
    """<theta(t), psi(0)> = <theta(0), psi(t)>, and <theta(t - s), psi(s)> constant in s.

    Each requested fraction of t is checked at the nearest s stored by both runs
    (s in the backward times, t - s in the forward times).
    """
    _check_pair(forward, backward)
    t = forward.horizon
    psi0 = backward.initial
    reference = inner(forward.final, psi0)
    scale = max(abs(reference), lp_norm(forward.initial, 2) * lp_norm(psi0, 2) * 1e-12, TINY)
    rows = [{"label": "s=t", "lhs": abs(inner(forward.initial, backward.final) - reference), "rhs": 0.0, "scale": scale}]
    spacing = np.min(np.diff(forward.times)) if len(forward.times) > 1 else t
    shared = np.array([
        s for s in backward.times
        if 0 < s < t and np.min(np.abs(forward.times - (t - s))) <= 1e-6 * spacing
    ])
    if not len(shared):
        raise PreconditionError(
            f"no intermediate s has both s and t - s stored (forward stores {len(forward.times)} times on [0, {t:g}])"
        )
    used = sorted({float(shared[np.argmin(np.abs(shared - fraction * t))]) for fraction in fractions})
    for s in used:
        theta = forward.field_at(t - s)
        psi = backward.field_at(s)
        rows.append({"label": f"s={s:.6g}", "lhs": abs(inner(theta, psi) - reference), "rhs": 0.0, "scale": scale})
    digest = input_digest(forward.final.values, backward.final.values, params={"tol": tol})
    notes = {"requested": [float(f * t) for f in fractions], "intermediate": used}
    return make_certificate("transfer", rows, tol, digest, {"pairing": reference}, notes)


def verify_dissipation_balance(traj: TrajectorySolution, problem: ViscousProblem, tol: float = 1e-4) -> Certificate:
    """L2 loss against the time integral of the dissipation rate."""
    table = dissipation_balance(traj, problem)
    scale = max(float(table["lhs"].abs().max()), TINY)
    rows = [
        {"label": f"t={t:.6g}", "lhs": abs(g), "rhs": 0.0, "scale": scale}
        for t, g in zip(table["time"], table["gap"])
    ]
    return make_certificate("dissipation_balance", rows, tol, _trajectory_digest(traj, tol=tol))


def verify_continuous_dependence(report: DependenceReport, tol: float = VERIFIER_TOL) -> Certificate:
    rows = [
        {"label": f"t={t:.6g}", "lhs": g, "rhs": report.bound * g0, "scale": None}
        for t, g, g0 in zip(report.table["time"], report.table["gap"], report.table["initial_gap"])
    ]
    digest = input_digest(report.table[["time", "gap"]].to_numpy(), params={"window": report.window, "p": report.p})
    return make_certificate("continuous_dependence", rows, tol, digest, {"ratio": report.ratio, "window": report.window})


# ---------------------------------------------------------------------------
# Kernel checks and aggregation
# ---------------------------------------------------------------------------


def verify_nondegeneracy(kernel: LevyKernel, tol: float = VERIFIER_TOL) -> Certificate:
    """Near two-sided and far one-sided density bounds as certificate samples."""
    report = check_nondegeneracy(kernel)
    rows = []
    if not np.isnan(report.near_min):
        rows.append({"label": "near,lower", "lhs": kernel.cbar1, "rhs": report.near_min, "scale": kernel.cbar1})
        rows.append({"label": "near,upper", "lhs": report.near_max, "rhs": kernel.cbar2, "scale": kernel.cbar2})
    if not np.isnan(report.far_max):
        rows.append({"label": "far,upper", "lhs": report.far_max, "rhs": kernel.cbar2, "scale": kernel.cbar2})
    rows.append({"label": "symmetric", "lhs": 0.0 if report.symmetric else 1.0, "rhs": 0.0, "scale": 1.0})
    digest = input_digest(params={"kernel": kernel.describe(), "tol": tol})
    return make_certificate("nondegeneracy", rows, tol, digest, notes=report.to_dict())


def combine_certificates(name: str, certificates: Sequence[Certificate], tol: Optional[float] = None) -> Certificate:
    """One certificate holding every sample of ``certificates``, labels prefixed by their index."""
    if not certificates:
        raise PreconditionError(f"nothing to combine into {name}")
    tol = max(c.tolerance for c in certificates) if tol is None else tol
    rows = []
    for i, cert in enumerate(certificates):
        for row in cert.samples.itertuples(index=False):
            rows.append({"label": f"{i}:{row.label}", "lhs": row.lhs, "rhs": row.rhs, "scale": row.scale})
    digest = input_digest(params={"parts": [c.digest for c in certificates], "tol": tol})
    constants = {f"{i}:{k}": v for i, c in enumerate(certificates) for k, v in c.constants.items()}
    notes = {"parts": [c.name for c in certificates]}
    return make_certificate(name, rows, tol, digest, constants, notes)
