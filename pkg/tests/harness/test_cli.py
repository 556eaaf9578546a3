import json

import numpy as np
import pytest

from app.harness import main
from app.harness.config import ReplicaSettings
from app.harness.main import (
    EXIT_CONFIG_NOT_FOUND,
    EXIT_MALFORMED_CONFIG,
    EXIT_MISSING_INPUT,
    EXIT_NUMERICAL,
    EXIT_OK,
    EXIT_UNEXPECTED,
    EXIT_USAGE,
    cli_dispatch,
    exit_code_for,
)
from app.landscape.errors import (
    ConfigError,
    ConfigNotFoundError,
    MissingInputError,
    SolverError,
)
from app.landscape.model import LossSpec
from app.landscape.replica import SaddleParams, ThresholdStateSolution
from app.landscape.rmt import JointLabelDensity


def error_line(capsys) -> dict:
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_exit_code_mapping():
    assert exit_code_for(ConfigNotFoundError("x")) == EXIT_CONFIG_NOT_FOUND
    assert exit_code_for(ConfigError("x")) == EXIT_MALFORMED_CONFIG
    assert exit_code_for(MissingInputError("x")) == EXIT_MISSING_INPUT
    assert exit_code_for(SolverError("x")) == EXIT_NUMERICAL
    assert exit_code_for(RuntimeError("x")) == EXIT_UNEXPECTED


def test_missing_config(tmp_path, capsys):
    code = cli_dispatch(["simulate", "--config", str(tmp_path / "no.yaml")])
    assert code == EXIT_CONFIG_NOT_FOUND
    assert error_line(capsys)["error"] == "config-not-found"


@pytest.mark.parametrize("text", ["N: [unclosed", "- a list", "alpha: -1",
                                  "unknown_key: 1"])
def test_malformed_config(tmp_path, capsys, text):
    path = tmp_path / "bad.yaml"
    path.write_text(text)
    assert cli_dispatch(["simulate", "--config", str(path)]) == (
        EXIT_MALFORMED_CONFIG
    )
    assert error_line(capsys)["exit_code"] == EXIT_MALFORMED_CONFIG


def test_unknown_flag_is_a_usage_error():
    assert cli_dispatch(["simulate", "--bogus"]) == EXIT_USAGE
    assert cli_dispatch(["no-such-command"]) == EXIT_USAGE
    assert cli_dispatch(["bbp", "--a-grid", "0.1,x"]) == EXIT_USAGE


def test_preset_and_config_are_exclusive(tmp_path):
    assert cli_dispatch(["sweep", "--preset", "random-init-desk",
                         "--config", str(tmp_path / "c.yaml")]) == EXIT_USAGE


def test_report_on_a_missing_directory(tmp_path, capsys):
    code = cli_dispatch(["report", "--run", str(tmp_path / "nothing")])
    assert code == EXIT_MISSING_INPUT
    assert error_line(capsys)["error"] == "missing-input"


def test_bbp_needs_its_pool(tmp_path):
    code = cli_dispatch(["bbp", "--density", "pool",
                         "--output-dir", str(tmp_path)])
    assert code == EXIT_MISSING_INPUT


def test_bbp_of_the_initial_density(tmp_path, capsys):
    code = cli_dispatch(["-q", "bbp", "--a", "1", "--density",
                         "analytic-init", "--output-dir", str(tmp_path)])
    assert code == EXIT_OK
    result = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert result["alpha_bbp"] == pytest.approx(1.13, abs=0.02)
    manifest = json.loads((tmp_path / "bbp.json").read_text())
    assert manifest["config"]["loss_a"] == 1.0
    assert manifest["kind"] == "bbp"


def test_simulate_writes_its_artifacts(tmp_path, capsys):
    code = cli_dispatch(["-q", "simulate", "--N", "16", "--alpha", "3",
                         "--steps", "20", "--seed", "4", "--save-instance",
                         "--output-dir", str(tmp_path)])
    assert code == EXIT_OK
    for name in ("trajectory.csv", "instance.npz", "simulate.json"):
        assert (tmp_path / name).is_file()
    result = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert result["steps"] <= 20
    assert len(result["instance_hash"]) == 40


def test_config_values_are_overridden_by_flags(tmp_path, capsys):
    path = tmp_path / "simulate.yaml"
    path.write_text(
        f"N: 16\nalpha: 2.0\nsteps: 10\noutput_dir: {tmp_path}\n"
    )
    assert cli_dispatch(["-q", "simulate", "--config", str(path),
                         "--alpha", "3"]) == EXIT_OK
    manifest = json.loads((tmp_path / "simulate.json").read_text())
    assert manifest["config"]["alpha"] == 3.0
    assert manifest["config"]["N"] == 16


def test_replica_solve_starts_at_the_homotopy_start(tmp_path, capsys,
                                                     monkeypatch):
    solved = []

    def solve(spec, alpha, config, initial):
        solved.append(alpha)
        return ThresholdStateSolution(
            alpha=alpha, params=SaddleParams(chi=1.0, z=1.0, q0=0.1),
            converged=True, residuals=(0.0, 0.0, 0.0), evaluations=1,
        )

    def density(spec, alpha, params, config):
        return JointLabelDensity.from_nodes(
            LossSpec(0.01), np.ones(2), np.ones(2), np.ones(2), "1rsb"
        )

    monkeypatch.setattr(main, "solve_threshold_state", solve)
    monkeypatch.setattr(main, "joint_density_1rsb", density)
    code = cli_dispatch(["-q", "replica-solve", "--output-dir",
                         str(tmp_path)])
    assert code == EXIT_OK
    assert solved == [ReplicaSettings().homotopy_start]
    result = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert result["alpha"] == ReplicaSettings().homotopy_start
    assert (tmp_path / "replica_density.csv").is_file()
