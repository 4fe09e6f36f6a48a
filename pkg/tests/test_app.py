import json
import textwrap

import numpy as np
import pytest

from app import EXIT_CONFIG, EXIT_FAILED, EXIT_OK, build_parser, main
from src.components.grid import FieldStack, Grid, SampledField, save_fields
from src.errors import ConfigurationError
from tools.norms import field_norms, parse_norm_spec

KERNEL_ONLY = """
    name: cli-kernel
    kernel:
      alpha: 0.5
      delta: 0.3
    verifiers: [symbol_bounds]
"""


@pytest.fixture
def kernel_config(tmp_path):
    path = tmp_path / "kernel.yaml"
    path.write_text(textwrap.dedent(KERNEL_ONLY))
    return path


def test_run_exit_code_and_summary(kernel_config, tmp_path, capsys):
    code = main(["--quiet", "run", str(kernel_config), "--output", str(tmp_path / "runs")])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "1/1 certificates pass" in out
    assert (tmp_path / "runs" / "cli-kernel" / "report.json").exists()


def test_failing_certificate_exits_one(kernel_config, tmp_path):
    code = main([
        "--quiet", "run", str(kernel_config), "--output", str(tmp_path / "runs"),
        "--set", "kernel.amplitude=3.0", "--set", "verifiers=[nondegeneracy]",
    ])
    assert code == EXIT_FAILED


def test_configuration_errors_exit_two(kernel_config, tmp_path, capsys):
    code = main(["--quiet", "run", str(kernel_config), "--set", "grid.pointz=3"])
    assert code == EXIT_CONFIG
    assert "grid.pointz" in capsys.readouterr().err
    assert main(["--quiet", "run", str(tmp_path / "missing.yaml")]) == EXIT_CONFIG


def test_sweep_with_empty_values_is_a_configuration_error(kernel_config):
    assert main(["--quiet", "sweep", str(kernel_config), "--axis", "seed", "--values", ","]) == EXIT_CONFIG


def test_check_kernel_command(kernel_config, tmp_path, capsys):
    code = main(["--quiet", "--workers", "1", "check-kernel", str(kernel_config), "--output", str(tmp_path)])
    assert code == EXIT_OK
    assert "2/2 certificates pass" in capsys.readouterr().out


def test_parser_requires_a_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_norm_spec_parsing():
    specs = parse_norm_spec("morrey:q=2,a=1;holder:gamma=0.5; lp:p=.inf")
    assert specs == [("morrey", {"q": 2, "a": 1}), ("holder", {"gamma": 0.5}), ("lp", {"p": float("inf")})]
    with pytest.raises(ConfigurationError):
        parse_norm_spec("morrey:q")


def test_norms_command_on_a_field_file(grid32, tmp_path, capsys):
    field = SampledField(grid32, np.full(grid32.shape, 2.0), time=0.5)
    path = FieldStack(grid32, [field]).save(tmp_path / "f.bin")
    records = field_norms(path, "lp:p=2;holder:gamma=0.5")
    assert records[0]["value"] == pytest.approx(2.0 * grid32.side_length)
    assert records[0]["time"] == 0.5
    assert records[1]["value"] == pytest.approx(2.0)
    assert main(["--quiet", "norms", str(path), "--spec", "lp:p=1"]) == EXIT_OK
    printed = json.loads(capsys.readouterr().out)
    assert printed[0]["norm_name"] == "lp"
    assert main(["--quiet", "norms", str(path), "--spec", "volume:p=1"]) == EXIT_CONFIG


def test_norms_reject_vector_files(tmp_path):
    grid = Grid(n=2, points_per_dim=8, side_length=1.0)
    path = save_fields(tmp_path / "v.bin", grid, [np.zeros((2, 8, 8))], components=2)
    assert main(["--quiet", "norms", str(path), "--spec", "lp:p=2"]) == EXIT_CONFIG
