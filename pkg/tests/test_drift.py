import numpy as np
import pytest

from src.components.drift import (
    DriftSpec,
    MollifierPair,
    VelocityField,
    make_divfree,
    mollifier_sup_check,
    mollify,
    space_mollify,
    spectral_divergence,
    time_mollify,
    verify_drift_cutoff_bound,
)
from src.components.grid import Grid, SampledField
from src.components.spaces import MorreyParams, lp_norm, VectorSlice
from src.errors import ConfigurationError, PreconditionError, UnderResolvedError

PARAMS = MorreyParams(q=2, a=1)


def test_stream_bump_is_divergence_free(grid64):
    v = make_divfree(DriftSpec(kind="stream", stream_profile="bump", width=0.6), grid64, PARAMS)
    scale = np.abs(v.components).max() * grid64.k_magnitude.max()
    assert np.abs(spectral_divergence(grid64, v.components[0])).max() <= 1e-10 * scale
    assert v.meta["morrey"] > 0


def test_zero_drift_has_zero_norm(grid32):
    v = make_divfree(DriftSpec(kind="zero"), grid32, PARAMS)
    assert v.is_zero
    assert v.meta["morrey"] == 0.0


def test_leray_projection_in_three_dimensions():
    grid = Grid(n=3, points_per_dim=8)
    v = make_divfree(DriftSpec(kind="leray", seed=3, max_mode=2), grid, MorreyParams(q=2, a=1))
    scale = np.abs(v.components).max() * grid.k_magnitude.max()
    assert np.abs(spectral_divergence(grid, v.components[0])).max() <= 1e-10 * scale
    assert "morrey" in v.meta


def test_stream_rejected_outside_two_dimensions():
    with pytest.raises(ConfigurationError):
        make_divfree(DriftSpec(kind="stream"), Grid(n=3, points_per_dim=8))


def test_target_norm_rescales(grid32):
    v = make_divfree(DriftSpec(kind="leray", seed=1, target_norm=1.0), grid32, PARAMS)
    assert v.morrey_norm(PARAMS) == pytest.approx(1.0, rel=1e-10)


def test_velocity_rejects_compressible_field(grid32):
    x, _ = grid32.coordinates
    comps = np.stack([np.sin(x), np.zeros_like(x)])[None]
    with pytest.raises(ConfigurationError):
        VelocityField(grid32, np.array([0.0]), comps)


def test_reversed_and_interpolated(grid32):
    v = make_divfree(DriftSpec(kind="shear", time_nodes=5, horizon=1.0, modulation="cosine"), grid32)
    w = v.reversed(1.0)
    np.testing.assert_allclose(w.at(0.3), v.at(0.7), atol=1e-14)
    np.testing.assert_allclose(v.at(0.125), 0.5 * (v.at(0.0) + v.at(0.25)), atol=1e-14)


def test_time_mollification_identity_at_interior_nodes(grid32):
    v = make_divfree(DriftSpec(kind="shear", time_nodes=21, horizon=1.0), grid32)
    smoothed = time_mollify(v, MollifierPair(0.1))
    np.testing.assert_allclose(smoothed.components[10], v.components[10], atol=1e-14)
    assert np.abs(smoothed.components[0]).max() < np.abs(v.components[0]).max()


def test_mollifier_sup_bound_with_frozen_constant(grid64):
    v = make_divfree(DriftSpec(kind="leray", seed=5, max_mode=8), grid64, PARAMS)
    h = grid64.spacing
    report = mollifier_sup_check(v, [8 * h, 4 * h, 2 * h], PARAMS)
    frozen = report.table["ratio"].iloc[0]
    assert np.all(report.table["ratio"] <= frozen * (1 + 1e-12))


def test_mollification_does_not_increase_morrey_norm(grid32):
    v = make_divfree(DriftSpec(kind="leray", seed=2, time_nodes=9, horizon=1.0, modulation="cosine"), grid32)
    before = v.morrey_norm(PARAMS)
    assert time_mollify(v, MollifierPair(0.25)).morrey_norm(PARAMS) <= before * (1 + 1e-10)
    assert space_mollify(v, MollifierPair(3 * grid32.spacing)).morrey_norm(PARAMS) <= before * (1 + 1e-10)


def test_mollify_converges_as_width_shrinks(grid64):
    v = make_divfree(DriftSpec(kind="leray", seed=4, max_mode=3), grid64)
    h = grid64.spacing
    errors = []
    for eps in (8 * h, 4 * h, 2 * h):
        diff = mollify(v, MollifierPair(eps)).components[0] - v.components[0]
        errors.append(lp_norm(VectorSlice(grid64, diff), 2))
    assert errors[0] > errors[1] > errors[2]


def test_mollifier_under_resolution(grid32):
    v = make_divfree(DriftSpec(kind="leray"), grid32)
    with pytest.raises(UnderResolvedError):
        mollify(v, MollifierPair(0.5 * grid32.spacing))


def test_mollifier_kernels_have_unit_mass(grid64):
    m = MollifierPair(4 * grid64.spacing)
    assert m.space_kernel(grid64).sum() * grid64.cell_volume == pytest.approx(1.0, abs=1e-12)
    assert m.time_weights(0.01 * m.epsilon).sum() == pytest.approx(1.0, abs=1e-12)


def _cutoff_grid():
    return Grid(points_per_dim=128, side_length=16.0)


def test_drift_cutoff_vanishes_for_zero_drift():
    grid = _cutoff_grid()
    field = SampledField(grid, np.ones(grid.shape))
    report = verify_drift_cutoff_bound(VelocityField.zero(grid), field, M=1.0, p=2, alpha=0.5, params=PARAMS, norm=1.0)
    assert np.all(report.table["lhs"] == 0)


def test_drift_cutoff_vanishes_at_half_level():
    grid = _cutoff_grid()
    v = make_divfree(DriftSpec(kind="shear", mode=16), grid)
    field = SampledField(grid, np.full(grid.shape, 0.5))
    report = verify_drift_cutoff_bound(v, field, M=1.0, p=2, alpha=0.5, params=PARAMS, norm=1.0)
    assert np.all(report.table["lhs"] == 0)


def test_drift_cutoff_ratio_stable_over_radii():
    grid = _cutoff_grid()
    v = make_divfree(DriftSpec(kind="shear", mode=16), grid)
    field = SampledField(grid, np.ones(grid.shape))
    report = verify_drift_cutoff_bound(v, field, M=1.0, p=2, alpha=0.5, params=PARAMS, norm=1.0)
    assert report.variation < 1.5


def test_drift_cutoff_requires_q_at_least_p_when_alpha_above_one():
    grid = _cutoff_grid()
    field = SampledField(grid, np.ones(grid.shape))
    with pytest.raises(PreconditionError):
        verify_drift_cutoff_bound(VelocityField.zero(grid), field, 1.0, p=4, alpha=1.5, params=MorreyParams(q=2, a=3), norm=1.0)
