import math
import textwrap

import numpy as np
import pytest

from src.components.levy import LevyKernel
from src.errors import ConfigurationError
from src.schema import (
    DriftConfig,
    InitialConfig,
    ScenarioConfig,
    apply_overrides,
    deep_merge,
    load_scenario,
    parse_value,
    scalar_at,
    with_value,
)


def _write(path, text):
    path.write_text(textwrap.dedent(text))
    return path


KERNEL_ONLY = """
    name: kernel-only
    kernel:
      alpha: 0.5
      delta: 0.3
    verifiers: [symbol_bounds]
"""


def test_minimal_kernel_scenario(tmp_path):
    config = load_scenario(_write(tmp_path / "k.yaml", KERNEL_ONLY))
    assert config.name == "kernel-only"
    assert config.kernel.build(config.grid.n) == LevyKernel(alpha=0.5, delta=0.3)
    assert config.grid.side_length == pytest.approx(2 * math.pi)
    assert not config.needs_solve
    assert config.solver is None


def test_unknown_key_is_rejected_with_field_path(tmp_path):
    path = _write(tmp_path / "k.yaml", KERNEL_ONLY + "    grid:\n      pointz: 64\n")
    with pytest.raises(ConfigurationError) as excinfo:
        load_scenario(path)
    assert excinfo.value.field_path == "grid.pointz"


def test_kernel_range_errors_keep_their_path(tmp_path):
    path = _write(tmp_path / "k.yaml", KERNEL_ONLY)
    with pytest.raises(ConfigurationError) as excinfo:
        load_scenario(path, ["kernel.delta=0.7"])
    assert excinfo.value.field_path == "kernel.delta"


def test_solve_verifiers_need_a_solver_section(tmp_path):
    path = _write(tmp_path / "k.yaml", KERNEL_ONLY)
    with pytest.raises(ConfigurationError) as excinfo:
        load_scenario(path, ["verifiers=[max_principle]"])
    assert excinfo.value.field_path == "solver"


def test_unknown_verifier_and_duplicates(tmp_path):
    path = _write(tmp_path / "k.yaml", KERNEL_ONLY)
    with pytest.raises(ConfigurationError):
        load_scenario(path, ["verifiers=[symbol_bound]"])
    with pytest.raises(ConfigurationError):
        load_scenario(path, ["verifiers=[symbol_bounds, symbol_bounds]"])


def test_molecule_exponents_must_be_ordered(tmp_path):
    path = _write(tmp_path / "k.yaml", KERNEL_ONLY)
    with pytest.raises(ConfigurationError) as excinfo:
        load_scenario(path, ["molecule_lab.gamma=0.6", "molecule_lab.omega_exp=0.5"])
    assert excinfo.value.field_path.startswith("molecule_lab")


def test_includes_merge_with_includer_winning(tmp_path):
    (tmp_path / "shared").mkdir()
    _write(tmp_path / "shared" / "grid.yaml", """
        grid:
          points_per_dim: 32
          side_length: 1.0
        seed: 3
    """)
    _write(tmp_path / "base.yaml", """
        include: shared/grid.yaml
        kernel: {alpha: 0.5, delta: 0.3}
        seed: 5
    """)
    path = _write(tmp_path / "top.yaml", """
        include: [base.yaml]
        name: top
        grid:
          points_per_dim: 16
        verifiers: [nondegeneracy]
    """)
    config = load_scenario(path)
    assert config.grid.points_per_dim == 16
    assert config.grid.side_length == 1.0
    assert config.seed == 5
    assert config.verifiers == ["nondegeneracy"]


def test_include_cycle_is_reported(tmp_path):
    _write(tmp_path / "a.yaml", "include: b.yaml\nname: a\n")
    _write(tmp_path / "b.yaml", "include: a.yaml\n")
    with pytest.raises(ConfigurationError, match="cycle"):
        load_scenario(tmp_path / "a.yaml")


def test_missing_file_is_a_configuration_error(tmp_path):
    with pytest.raises(ConfigurationError):
        load_scenario(tmp_path / "absent.yaml")


def test_overrides_parse_yaml_values():
    tree = apply_overrides({"solver": {"dt": 0.01}}, ["solver.dt=5e-3", "verifiers=[max_principle, positivity]", "name=x"])
    assert tree["solver"]["dt"] == pytest.approx(0.005)
    assert tree["verifiers"] == ["max_principle", "positivity"]
    assert tree["name"] == "x"
    assert parse_value(".inf") == math.inf
    with pytest.raises(ConfigurationError):
        apply_overrides({}, ["solver.dt"])
    with pytest.raises(ConfigurationError):
        apply_overrides({"name": "x"}, ["name.sub=1"])


def test_deep_merge_keeps_untouched_branches():
    merged = deep_merge({"a": {"b": 1, "c": 2}, "d": 1}, {"a": {"b": 3}})
    assert merged == {"a": {"b": 3, "c": 2}, "d": 1}


def test_digest_tracks_the_seed(tmp_path):
    config = load_scenario(_write(tmp_path / "k.yaml", KERNEL_ONLY))
    again = load_scenario(tmp_path / "k.yaml")
    assert config.digest() == again.digest()
    assert with_value(config, "seed", 1).digest() != config.digest()


def test_scalar_paths():
    config = ScenarioConfig(kernel={"alpha": 0.5, "delta": 0.3})
    assert scalar_at(config, "kernel.alpha") == 0.5
    with pytest.raises(ConfigurationError):
        scalar_at(config, "kernel")
    with pytest.raises(ConfigurationError):
        scalar_at(config, "kernel.beta")
    moved = with_value(config, "molecule_lab.radii", 0.125, name="r")
    assert moved.molecule_lab.radii == [0.125]
    assert moved.name == "r"


def test_positive_initial_data_spans_zero_to_amplitude(grid32):
    theta0 = InitialConfig(kind="random", positive=True, amplitude=2.0).build(grid32, np.random.default_rng(0))
    assert theta0.values.min() == pytest.approx(0.0)
    assert theta0.values.max() == pytest.approx(2.0)
    assert theta0.time == 0.0


def test_initial_data_is_seeded(grid32):
    a = InitialConfig(kind="noise", smoothing=0.1).build(grid32, np.random.default_rng(4))
    b = InitialConfig(kind="noise", smoothing=0.1).build(grid32, np.random.default_rng(4))
    assert np.array_equal(a.values, b.values)
    assert np.abs(a.values).max() == pytest.approx(1.0)


def test_mode_initial_data_checks_dimension(grid32):
    with pytest.raises(ConfigurationError):
        InitialConfig(kind="mode", mode=[1, 0, 0]).build(grid32, np.random.default_rng(0))


def test_drift_section_builds_mollified_field(grid32):
    v = DriftConfig(kind="shear", amplitude=0.5, mollifier=0.5).build(grid32, seed=0, horizon=1.0)
    raw = DriftConfig(kind="shear", amplitude=0.5).build(grid32, seed=0, horizon=1.0)
    assert v.sup_norm() <= raw.sup_norm() * (1 + 1e-12)
    assert raw.meta["morrey_params"] == {"q": 2.0, "a": 1.0, "local": False}
