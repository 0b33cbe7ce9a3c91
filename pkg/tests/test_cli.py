import json
import subprocess
import sys

import pytest
import yaml

from perfhom import cli
from perfhom.io import read_csv, read_field_dump

from conftest import DESK

EPS = "0.0625"


@pytest.mark.parametrize("command, dump", [("solve-micro", "micro"), ("solve-limit", "limit"),
                                           ("solve-outer", "outer"), ("solve-corrector", "corrector")])
def test_solve_commands(tmp_path, command, dump):
    out = tmp_path / command
    assert cli.run([command, "--config", str(DESK), "--eps", EPS, "--out", str(out)]) == cli.EXIT_OK
    assert {p.name for p in out.iterdir()} == {"run_report.csv", "checks.csv", "manifest.json", f"{dump}.npz"}
    assert all(row["passed"] == "true" for row in read_csv(out / "checks.csv"))
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["scenario"]["geometry"]["eps"] == 0.0625
    header, *_ = read_field_dump(out / f"{dump}.npz")
    assert header["kind"] == dump


def test_cell_command(tmp_path):
    out = tmp_path / "cell"
    assert cli.run(["cell", "--config", str(DESK), "--eps", EPS, "--out", str(out)]) == cli.EXIT_OK
    (row,) = read_csv(out / "cell_summary.csv")
    assert row["problem"] == "w"
    (check,) = read_csv(out / "checks.csv")
    assert check["check"] == "far_field_flux" and check["passed"] == "true"


def test_validate_config_echoes_scenario(capsys):
    assert cli.run(["validate-config", "--config", str(DESK)]) == cli.EXIT_OK
    assert yaml.safe_load(capsys.readouterr().out)["coefficients"]["h"] == 1.5


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text(DESK.read_text().replace("eps: 0.0625", "eps: 0.3"))
    assert cli.run(["validate-config", "--config", str(bad)]) == cli.EXIT_CONFIG
    assert "config error" in capsys.readouterr().err
    assert cli.run(["solve-micro", "--config", str(tmp_path / "missing.yaml")]) == cli.EXIT_CONFIG


def test_study_rejects_eps(tmp_path):
    assert cli.run(["study", "--config", str(DESK), "--eps", EPS, "--out", str(tmp_path)]) == cli.EXIT_CONFIG


def test_solver_failure_exit_code(tmp_path, monkeypatch):
    def boom(sc, variant):
        raise cli.SolverError("singular system")

    monkeypatch.setattr(cli, "solve_variant", boom)
    assert cli.run(["solve-limit", "--config", str(DESK), "--out", str(tmp_path)]) == cli.EXIT_SOLVER


def test_acceptance_failure_exit_code(tmp_path, monkeypatch):
    monkeypatch.setattr(cli, "expected_w_flux", lambda sol: (1.0, -1.0))
    assert cli.run(["cell", "--config", str(DESK), "--out", str(tmp_path)]) == cli.EXIT_ACCEPTANCE
    (check,) = read_csv(tmp_path / "checks.csv")
    assert check["passed"] == "false"


def test_console_script_module_entry(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "perfhom.cli", "validate-config", "--config", str(DESK)],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert "geometry" in proc.stdout


@pytest.mark.slow
def test_study_is_deterministic_serial_vs_parallel(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.run(["study", "--config", str(DESK), "--out", str(a)]) == cli.EXIT_OK
    assert cli.run(["study", "--config", str(DESK), "--out", str(b), "--parallel", "3"]) == cli.EXIT_OK
    for name in ("rates.csv", "checks.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
