import json
import math

import numpy as np
import pytest

from src.components.drift import DriftSpec, make_divfree
from src.components.grid import Grid, SampledField
from src.components.holder import (
    MoleculeFamily,
    big_molecule_bound,
    build_family,
    direct_holder_exponent,
    duality_pairing,
    estimate_holder_exponent,
    export_holder_report,
    pairing_map,
    verify_pairing_chain,
)
from src.components.levy import LevyKernel
from src.components.molecules import classify_regime, make_molecule
from src.components.solver import SolverConfig, ViscousProblem, heat_semigroup, imex_solve
from src.components.spaces import inner, lp_norm
from src.errors import ConfigurationError, FitError, GridMismatchError, PreconditionError, UnderResolvedError
from tests.helpers import single_mode, smooth_random

UNIT_64 = Grid(n=2, points_per_dim=64, side_length=1.0)
UNIT_128 = Grid(n=2, points_per_dim=128, side_length=1.0)


def _run(theta0: SampledField, horizon: float, dt: float, kernel=None, eps: float = 0.0):
    v = make_divfree(DriftSpec(kind="zero"), theta0.grid)
    problem = ViscousProblem(kernel, v, eps, theta0, horizon)
    return imex_solve(problem, SolverConfig(dt=dt))


@pytest.fixture(scope="module")
def heat_smoothed_noise():
    rng = np.random.default_rng(7)
    theta0 = SampledField(UNIT_128, rng.normal(size=UNIT_128.shape))
    return _run(theta0, horizon=1.0, dt=0.25, eps=0.05)


# ---------------------------------------------------------------------------
# Pairings
# ---------------------------------------------------------------------------


def test_pairing_with_constant_vanishes(grid64):
    m = make_molecule(0.25, grid64.center(), 0.2, 0.5, 2.0, grid64)
    theta = SampledField(grid64, np.full(grid64.shape, 3.0))
    assert abs(duality_pairing(theta, m)) <= 1e-12 * 3.0 * lp_norm(m.field, 1.0)


def test_self_pairing_is_l2_norm_squared(grid64):
    m = make_molecule(0.25, grid64.center(), 0.2, 0.5, 2.0, grid64, profile="dipole")
    assert duality_pairing(m.field, m) == pytest.approx(lp_norm(m.field, 2.0) ** 2, rel=1e-12)


def test_pairing_matches_independent_summation(grid64, rng):
    m = make_molecule(0.25, (1.0, 2.0), 0.2, 0.5, 2.0, grid64)
    theta = smooth_random(grid64, rng, max_mode=6)
    oracle = math.fsum((theta.values * m.field.values).ravel()) * grid64.cell_volume
    assert duality_pairing(theta, m) == pytest.approx(oracle, rel=1e-12, abs=1e-15)


def test_pairing_map_entries_are_translated_pairings(grid64, rng):
    m = make_molecule(0.25, (0.0, 0.0), 0.2, 0.5, 2.0, grid64, profile="dipole")
    theta = smooth_random(grid64, rng, max_mode=6)
    full = pairing_map(theta, m)
    shifted = m.field.with_values(np.roll(m.field.values, shift=(5, 9), axis=(0, 1)))
    assert full[5, 9] == pytest.approx(inner(theta, shifted), rel=1e-10, abs=1e-14)
    assert pairing_map(theta, m, stride=4).shape == (16, 16)


def test_pairing_rejects_foreign_grid(grid32, grid64):
    m = make_molecule(0.25, grid64.center(), 0.2, 0.5, 2.0, grid64)
    with pytest.raises(GridMismatchError):
        duality_pairing(SampledField(grid32, np.ones(grid32.shape)), m)


# ---------------------------------------------------------------------------
# Families
# ---------------------------------------------------------------------------


def test_family_covers_dyadic_ladder():
    family = build_family(UNIT_128, 0.2, 0.5, 2.0)
    assert family.scales.tolist() == [0.125, 0.0625, 0.03125, 0.015625]
    assert family.profile == "dipole"
    assert all(cert.passed for cert in family.certificates())
    assert family.centers().shape == (32 * 32, 2)


def test_family_respects_r_max():
    family = build_family(UNIT_128, 0.2, 0.5, 2.0, r_max=0.05)
    assert family.scales.max() == 0.03125


def test_family_needs_a_resolvable_scale():
    with pytest.raises(UnderResolvedError):
        build_family(Grid(n=2, points_per_dim=8, side_length=1.0), 0.2, 0.5, 2.0)


def test_family_rejects_mixed_members():
    a = make_molecule(0.125, (0.0, 0.0), 0.2, 0.5, 2.0, UNIT_64)
    b = make_molecule(0.0625, (0.0, 0.0), 0.3, 0.5, 2.0, UNIT_64)
    with pytest.raises(ConfigurationError):
        MoleculeFamily((a, b))


# ---------------------------------------------------------------------------
# Exponents
# ---------------------------------------------------------------------------


def test_direct_exponent_reaches_probe_ceiling_for_smooth_field(grid64):
    gamma, table = direct_holder_exponent(single_mode(grid64, (1, 1)))
    assert gamma == pytest.approx(0.95)
    assert bool(table["stable"].all())


def test_direct_exponent_is_small_for_white_noise(grid64, rng):
    gamma, _ = direct_holder_exponent(SampledField(grid64, rng.normal(size=grid64.shape)))
    assert gamma <= 0.2


def test_heat_smoothed_noise_exponents_agree(heat_smoothed_noise):
    family = build_family(UNIT_128, 0.2, 0.5, 2.0, profile="concentric")
    gamma_dual, gamma_direct, report = estimate_holder_exponent(heat_smoothed_noise, family, t=1.0, T0=0.5)
    assert gamma_direct >= 0.9
    assert gamma_dual is not None
    assert abs(gamma_dual - gamma_direct) <= 0.15
    assert report.verdict == "agree"
    assert report.fit_r2 >= 0.9


def test_constant_field_is_flat():
    traj = _run(SampledField(UNIT_64, np.full(UNIT_64.shape, 2.0)), horizon=0.5, dt=0.25, eps=0.01)
    family = build_family(UNIT_64, 0.2, 0.5, 2.0)
    gamma_dual, _, report = estimate_holder_exponent(traj, family, t=0.5, T0=0.25)
    assert gamma_dual is None
    assert report.verdict == "flat"
    assert report.to_dict()["fit_r2"] is None


def test_fractional_evolution_records_regime_check(rng):
    kernel = LevyKernel(alpha=0.8, delta=0.6, profile="two-exponent")
    traj = _run(smooth_random(UNIT_64, rng, max_mode=1), horizon=0.2, dt=0.05, kernel=kernel)
    family = build_family(UNIT_64, 0.2, 0.5, 2.0, profile="concentric")
    bound = classify_regime(0.8, 0.6, 0.2, 0.5, 20.0).holder_bound
    gamma_dual, _, report = estimate_holder_exponent(traj, family, t=0.2, T0=0.2, regime_bound=bound)
    assert gamma_dual is not None and gamma_dual >= 0.0
    assert report.regime_bound == pytest.approx(0.6)
    assert report.regime_check is True


def test_probe_preconditions(heat_smoothed_noise):
    family = build_family(UNIT_128, 0.2, 0.5, 2.0)
    with pytest.raises(PreconditionError):
        estimate_holder_exponent(heat_smoothed_noise, family, t=0.25, T0=0.5)
    with pytest.raises(ConfigurationError):
        estimate_holder_exponent(heat_smoothed_noise, family, t=1.0, T0=0.0)
    with pytest.raises(ConfigurationError):
        estimate_holder_exponent(heat_smoothed_noise, family, t=0.9, T0=0.5)


def test_two_scales_are_too_few_to_fit(grid64, rng):
    traj = _run(smooth_random(grid64, rng, max_mode=2), horizon=0.5, dt=0.25, eps=0.01)
    family = build_family(grid64, 0.2, 0.5, 2.0)
    assert len(family.members) == 2
    with pytest.raises(FitError):
        estimate_holder_exponent(traj, family, t=0.5, T0=0.5)


def test_report_export(heat_smoothed_noise, tmp_path):
    family = build_family(UNIT_128, 0.2, 0.5, 2.0, profile="concentric")
    _, _, report = estimate_holder_exponent(heat_smoothed_noise, family, t=1.0, T0=0.5, regime_bound=0.6)
    paths = export_holder_report(report, tmp_path)
    summary = json.loads((tmp_path / "holder.json").read_text())
    assert {"gamma_dual", "gamma_direct", "fit_r2", "regime_bound", "verdict"} <= set(summary)
    assert (tmp_path / "holder_decay.csv").exists()
    assert paths["stability"].endswith("holder_stability.csv")


# ---------------------------------------------------------------------------
# Pairing bounds
# ---------------------------------------------------------------------------


def test_pairing_chain_holds_with_drift(grid32, rng, stable_kernel):
    v = make_divfree(DriftSpec(kind="shear", amplitude=0.5), grid32)
    theta0 = smooth_random(grid32, rng, positive=True)
    problem = ViscousProblem(stable_kernel, v, 0.0, theta0, 0.2)
    config = SolverConfig(dt=0.05)
    traj = imex_solve(problem, config)
    molecules = [
        make_molecule(0.5, (np.pi, np.pi), 0.2, 0.5, 2.0, grid32),
        make_molecule(0.5, (1.0, 4.0), 0.2, 0.5, 2.0, grid32, profile="dipole"),
    ]
    cert = verify_pairing_chain(traj, problem, molecules, config=config)
    assert cert.passed
    assert len(cert.samples) == 2


def test_big_molecule_bound_holds(rng):
    grid = Grid(n=2, points_per_dim=64, side_length=32.0)
    m = make_molecule(1.0, (16.0, 16.0), 0.2, 0.5, 2.0, grid, profile="bump")
    theta0 = smooth_random(grid, rng, positive=True)
    cert = big_molecule_bound(theta0, heat_semigroup(theta0, 1.0), m)
    assert cert.passed
    assert cert.constants["C"] == pytest.approx(m.bounds()["l1"] * m.r**0.2)


def test_big_molecule_bound_rejects_small_molecule(grid64):
    m = make_molecule(0.25, grid64.center(), 0.2, 0.5, 2.0, grid64)
    with pytest.raises(PreconditionError):
        big_molecule_bound(m.field, m.field, m)
