import dataclasses

import numpy as np
import pytest

from src.components.drift import DriftSpec, VelocityField, make_divfree
from src.components.grid import Grid, SampledField, load_fields
from src.components.levy import LevyKernel, tabulate_symbol
from src.components.solver import (
    SolverConfig,
    TransportOperator,
    ViscousProblem,
    backward_dual_solve,
    contraction_constant,
    continuous_dependence,
    dissipation_balance,
    export_trajectory,
    heat_semigroup,
    imex_solve,
    imex_step,
    local_window,
    picard_solve,
    vanishing_viscosity,
)
from src.components.spaces import inner, lp_norm
from src.errors import CFLViolationError, ConfigurationError, PreconditionError
from tests.helpers import gaussian, single_mode, smooth_random

WEAK_KERNEL = LevyKernel(alpha=0.5, delta=0.3, cbar1=0.1, cbar2=0.1)


def _problem(grid, theta0, kernel=WEAK_KERNEL, drift=None, eps=0.05, horizon=0.1):
    v = VelocityField.zero(grid) if drift is None else drift
    return ViscousProblem(kernel, v, eps, theta0, horizon)


def _shear(grid, amplitude=0.5, **kw):
    return make_divfree(DriftSpec(kind="shear", amplitude=amplitude, **kw), grid)


def test_heat_semigroup_identity_and_mode(grid32):
    f = single_mode(grid32, (2, 1))
    assert heat_semigroup(f, 0.0) is f
    np.testing.assert_allclose(heat_semigroup(f, 0.3).values, np.exp(-0.3 * 5) * f.values, atol=1e-12)


@pytest.mark.parametrize("p", [1.0, 2.0, np.inf])
def test_heat_semigroup_contracts_lp(grid32, rng, p):
    f = smooth_random(grid32, rng, max_mode=6)
    assert lp_norm(heat_semigroup(f, 0.5), p) <= lp_norm(f, p) * (1 + 1e-10)


def test_transport_operator_is_skew_adjoint(grid32, rng):
    v = _shear(grid32, amplitude=1.0, mode=2)
    D = TransportOperator(grid32, v.components[0])
    f = smooth_random(grid32, rng, max_mode=8)
    g = smooth_random(grid32, rng, max_mode=8)
    lhs = inner(f.with_values(D(f.values)), g)
    rhs = -inner(f, g.with_values(D(g.values)))
    assert lhs == pytest.approx(rhs, abs=1e-12 * grid32.volume)


def test_contraction_constant_without_drift(grid32):
    problem = _problem(grid32, single_mode(grid32), kernel=LevyKernel(alpha=0.5, delta=0.3), eps=0.1)
    T = 0.2
    expected = 3.0 * (T**0.75 / 0.1**0.25 + T**0.85 / 0.1**0.15)
    assert contraction_constant(problem, T, prefactor=3.0) == pytest.approx(expected, rel=1e-12)
    assert contraction_constant(problem, 1e-12, prefactor=3.0) < 1e-8


def test_local_window_is_maximal(grid32):
    problem = _problem(grid32, single_mode(grid32), kernel=LevyKernel(alpha=0.5, delta=0.3), eps=0.1, horizon=100.0)
    Tprime = local_window(problem, prefactor=2.0)
    assert contraction_constant(problem, Tprime, 2.0) <= 0.5
    assert contraction_constant(problem, 2 * Tprime, 2.0) > 0.5


def test_picard_zero_data_stays_zero(grid32):
    problem = _problem(grid32, SampledField(grid32, np.zeros(grid32.shape)), drift=_shear(grid32))
    traj = picard_solve(problem, SolverConfig(dt=0.01))
    assert all(not np.any(f.values) for f in traj.fields)


def test_picard_matches_closed_form_mode(grid32):
    theta0 = single_mode(grid32, (1, 0))
    problem = _problem(grid32, theta0, eps=0.1, horizon=0.1)
    traj = picard_solve(problem, SolverConfig(dt=1e-3, scheme="picard-duhamel"))
    a = tabulate_symbol(WEAK_KERNEL, grid32).values[1, 0]
    expected = np.exp(-0.1 * (a + 0.1)) * theta0.values
    assert lp_norm(traj.final.with_values(traj.final.values - expected), 2) <= 1e-6 * lp_norm(theta0, 2)
    assert traj.times[-1] == pytest.approx(0.1)


@pytest.mark.parametrize("modulation", ["none", "cosine"])
@pytest.mark.parametrize("seed", range(5))
def test_picard_residuals_contract(grid32, seed, modulation):
    theta0 = smooth_random(grid32, np.random.default_rng(seed), positive=True)
    drift = _shear(grid32, time_nodes=1 if modulation == "none" else 9, horizon=0.05, modulation=modulation)
    problem = _problem(grid32, theta0, kernel=LevyKernel(alpha=0.8, delta=0.6, profile="two-exponent"), drift=drift, eps=0.1, horizon=0.05)
    traj = picard_solve(problem, SolverConfig(dt=0.005))
    assert traj.times[-1] == pytest.approx(0.05)
    for history in traj.windows["residual_history"]:
        for earlier, later in zip(history[1:], history[2:]):
            if earlier > 1e-12:
                assert later / earlier <= 0.55
    assert np.all(traj.windows["contraction"] <= 0.5 + 1e-9)


def test_picard_requires_viscosity(grid32):
    with pytest.raises(PreconditionError):
        picard_solve(_problem(grid32, single_mode(grid32), eps=0.0), SolverConfig())


def test_imex_step_without_drift_is_exact_multiplier(grid32):
    theta0 = single_mode(grid32, (2, 0))
    problem = _problem(grid32, theta0, eps=0.05)
    out = imex_step(theta0, 0.0, 0.02, problem)
    a = tabulate_symbol(WEAK_KERNEL, grid32).values[2, 0]
    np.testing.assert_allclose(out.values, np.exp(-0.02 * (a + 0.05 * 4)) * theta0.values, atol=1e-13)
    assert out.time == pytest.approx(0.02)


def test_imex_rejects_cfl_violation(grid32):
    problem = _problem(grid32, single_mode(grid32), drift=_shear(grid32, amplitude=10.0))
    with pytest.raises(CFLViolationError):
        imex_solve(problem, SolverConfig(dt=0.05))


def test_imex_observed_order(grid32, rng):
    theta0 = smooth_random(grid32, rng)
    drift = _shear(grid32, amplitude=1.0, time_nodes=9, horizon=0.4, modulation="cosine")
    problem = _problem(grid32, theta0, drift=drift, horizon=0.4)
    finals = [imex_solve(problem, SolverConfig(dt=dt)).final.values for dt in (0.05, 0.025, 0.0125)]
    e1 = np.linalg.norm(finals[0] - finals[1])
    e2 = np.linalg.norm(finals[1] - finals[2])
    assert np.log2(e1 / e2) >= 0.9


def test_picard_and_imex_agree(grid32, rng):
    theta0 = smooth_random(grid32, rng, positive=True)
    problem = _problem(grid32, theta0, drift=_shear(grid32), eps=0.05, horizon=0.1)
    a = picard_solve(problem, SolverConfig(dt=0.005)).final
    b = imex_solve(problem, SolverConfig(dt=0.005)).final
    assert lp_norm(a.with_values(a.values - b.values), 2) <= 5e-3


@pytest.mark.parametrize("scheme", ["imex-spectral", "picard-duhamel"])
def test_mass_and_l2_decay(grid32, rng, scheme):
    theta0 = smooth_random(grid32, rng, positive=True)
    problem = _problem(grid32, theta0, drift=_shear(grid32), eps=0.05, horizon=0.05)
    traj = imex_solve(problem, SolverConfig(dt=0.005)) if scheme == "imex-spectral" else picard_solve(problem, SolverConfig(dt=0.005))
    mass = traj.diagnostics["mass"].to_numpy()
    np.testing.assert_allclose(mass, mass[0], rtol=1e-10)
    l2 = traj.diagnostics["l2"].to_numpy()
    assert np.all(np.diff(l2) <= 1e-6 * l2[:-1])


def test_constant_state_is_steady(grid32):
    theta0 = SampledField(grid32, np.full(grid32.shape, 0.7))
    traj = imex_solve(_problem(grid32, theta0, drift=_shear(grid32)), SolverConfig(dt=0.01))
    np.testing.assert_allclose(traj.final.values, 0.7, atol=1e-13)


def test_backward_without_drift_is_levy_flow(grid32):
    psi0 = single_mode(grid32, (0, 3))
    traj = backward_dual_solve(VelocityField.zero(grid32), WEAK_KERNEL, psi0, 0.2, SolverConfig(dt=0.01))
    a = tabulate_symbol(WEAK_KERNEL, grid32).values[0, 3]
    np.testing.assert_allclose(traj.final.values, np.exp(-0.2 * a) * psi0.values, atol=1e-12)
    assert traj.meta["direction"] == "backward"


def test_backward_duality_and_zero_mean(grid32, rng):
    drift = _shear(grid32, amplitude=1.0, time_nodes=5, horizon=0.2, modulation="cosine")
    theta0 = smooth_random(grid32, rng, positive=True)
    psi0 = smooth_random(grid32, rng)
    psi0 = psi0.with_values(psi0.values - psi0.values.mean())
    forward = imex_solve(ViscousProblem(WEAK_KERNEL, drift, 0.0, theta0, 0.2), SolverConfig(dt=0.01))
    backward = backward_dual_solve(drift, WEAK_KERNEL, psi0, 0.2, SolverConfig(dt=0.01))
    lhs = inner(forward.final, psi0)
    rhs = inner(theta0, backward.final)
    assert lhs == pytest.approx(rhs, rel=1e-5, abs=1e-12)
    assert abs(backward.final.values.mean()) <= 1e-10


def test_vanishing_viscosity_heat_oracle(grid32, rng):
    theta0 = smooth_random(grid32, rng)
    problem = ViscousProblem(None, VelocityField.zero(grid32), 0.04, theta0, 0.1)
    report = vanishing_viscosity(problem, [0.04, 0.02, 0.01], SolverConfig(dt=0.01))
    d = report.table["distance_to_next"].to_numpy()
    assert 1.8 < d[0] / d[1] < 2.2
    assert report.monotone and report.empirical


def test_vanishing_viscosity_zero_data(grid32):
    theta0 = SampledField(grid32, np.zeros(grid32.shape))
    problem = _problem(grid32, theta0, drift=_shear(grid32))
    report = vanishing_viscosity(problem, [0.1, 0.05, 0.0], SolverConfig(dt=0.01))
    assert np.all(report.table["distance_to_limit"] == 0)


def test_vanishing_viscosity_smooth_trend(grid32, rng):
    theta0 = smooth_random(grid32, rng, positive=True)
    problem = _problem(grid32, theta0, drift=_shear(grid32))
    report = vanishing_viscosity(problem, [0.4, 0.2, 0.1, 0.05], SolverConfig(dt=0.01))
    assert report.monotone
    assert report.table["clamped"].iloc[-1]


def test_vanishing_viscosity_needs_three_values(grid32):
    with pytest.raises(ConfigurationError):
        vanishing_viscosity(_problem(grid32, single_mode(grid32)), [0.1, 0.05], SolverConfig())


def test_dissipation_balance_closes(grid32, rng):
    theta0 = smooth_random(grid32, rng)
    problem = _problem(grid32, theta0, kernel=LevyKernel(alpha=0.5, delta=0.3), drift=_shear(grid32), eps=0.05)
    traj = imex_solve(problem, SolverConfig(dt=0.0005))
    table = dissipation_balance(traj, problem)
    assert np.abs(table["gap"]).max() <= 1e-4 * table["lhs"].abs().max()
    assert np.all(table["rhs"].diff().dropna() >= 0)


def test_continuous_dependence_factor_two(grid32, rng):
    theta0 = smooth_random(grid32, rng, positive=True)
    problem = _problem(grid32, theta0, drift=_shear(grid32), eps=0.1)
    perturbation = gaussian(grid32, 0.5).with_values(0.01 * gaussian(grid32, 0.5).values)
    report = continuous_dependence(problem, perturbation, SolverConfig(dt=0.005))
    assert report.bound == pytest.approx(2.0)
    assert report.passed


def test_trajectory_export(tmp_path, grid32, rng):
    traj = imex_solve(_problem(grid32, smooth_random(grid32, rng)), SolverConfig(dt=0.02, store_every=2))
    paths = export_trajectory(traj, tmp_path)
    grid, arrays, times, _ = load_fields(paths["fields"])
    assert grid == grid32
    assert len(arrays) == len(traj.fields)
    np.testing.assert_allclose(times, traj.times)
    np.testing.assert_allclose(arrays[-1], traj.final.values)


def test_solver_config_validation():
    with pytest.raises(ConfigurationError):
        SolverConfig(scheme="rk4")
    with pytest.raises(ConfigurationError):
        SolverConfig(dt=0.0)
    assert dataclasses.replace(SolverConfig(), dt=0.5).dt == 0.5
