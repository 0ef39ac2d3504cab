"""Integration tests for the ``align`` command line."""

from __future__ import annotations

import csv
import io
import json
import logging
from collections.abc import Iterator
from pathlib import Path

import pytest
from typer.testing import CliRunner

from align_lab import main
from align_lab.core.exceptions import NumericAbortError
from align_lab.harness.checks import CheckResult, CheckSuiteReport
from align_lab.hooks import logging as logging_hooks
from align_lab.main import app

TINY_CONFIG = """\
name = "tiny"
seed = 0

[mdp]
symbols = ["a", "b"]
capacity = 2
prompts = [""]

[expert]
temperature = 1.0
rewards = [{ response = "a|<eos>", value = 1.0 }]
modes = [{ response = "a|<eos>" }]

[training]
objective = "SFT"
dataset_size = 32

[optimizer]
max_iters = 20
report_every = 10

[adversarial]
rounds = 4
disc_steps = 5
report_every = 2
"""

PREFERENCES = """\
prompt,winner,loser
x,a,b
x,a,b
x,b,a
x,a,c
x,b,c
x,c,b
y,p,q
y,q,p
y,p,q
"""

runner = CliRunner()


@pytest.fixture(autouse=True)
def quiet_logging(monkeypatch: pytest.MonkeyPatch) -> Iterator[None]:
    """Let each invocation configure logging, then put the package logger back."""
    package = logging.getLogger("align_lab")
    handlers, level, propagate = list(package.handlers), package.level, package.propagate
    monkeypatch.setattr(logging_hooks, "_logging_configured", False)
    yield
    package.handlers[:] = handlers
    package.setLevel(level)
    package.propagate = propagate


@pytest.fixture
def config_file(tmp_path: Path) -> Path:
    path = tmp_path / "tiny.toml"
    path.write_text(TINY_CONFIG)
    return path


@pytest.fixture
def preferences_file(tmp_path: Path) -> Path:
    path = tmp_path / "prefs.csv"
    path.write_text(PREFERENCES)
    return path


class TestVersion:
    """Tests for the version command."""

    def test_version(self) -> None:
        from align_lab import __version__

        result = runner.invoke(app, ["version"])
        assert result.exit_code == 0
        assert __version__ in result.output

    def test_no_args_shows_help(self) -> None:
        result = runner.invoke(app, [])
        assert "run" in result.output
        assert "btfit" in result.output


class TestRun:
    """Tests for the run command."""

    def test_json_to_stdout(self, config_file: Path) -> None:
        result = runner.invoke(app, ["--log-level", "ERROR", "run", "-c", str(config_file)])
        assert result.exit_code == 0, result.output
        report = json.loads(result.stdout)
        assert report["name"] == "tiny"
        assert report["objective"] == "SFT"
        assert report["iterations"] == 20

    def test_seed_override(self, config_file: Path, tmp_path: Path) -> None:
        out = tmp_path / "report.json"
        result = runner.invoke(
            app,
            ["--log-level", "ERROR", "run", "-c", str(config_file), "--seed", "5", "-o", str(out)],
        )
        assert result.exit_code == 0, result.output
        assert json.loads(out.read_text())["seed"] == 5
        assert "Config hash" in result.output

    def test_csv_history(self, config_file: Path, tmp_path: Path) -> None:
        out = tmp_path / "history.csv"
        result = runner.invoke(
            app,
            ["--log-level", "ERROR", "run", "-c", str(config_file), "-f", "csv", "-o", str(out)],
        )
        assert result.exit_code == 0, result.output
        rows = list(csv.DictReader(io.StringIO(out.read_text())))
        assert [row["round"] for row in rows] == ["0", "10", "20"]
        assert "fkl" in rows[0]

    def test_missing_config(self, tmp_path: Path) -> None:
        result = runner.invoke(
            app, ["--log-level", "ERROR", "run", "-c", str(tmp_path / "none.toml")]
        )
        assert result.exit_code == main.EXIT_CONFIG
        assert "not found" in result.output

    def test_invalid_config(self, tmp_path: Path) -> None:
        path = tmp_path / "bad.toml"
        path.write_text(TINY_CONFIG.replace('objective = "SFT"', 'objective = "PPO"'))
        result = runner.invoke(app, ["--log-level", "ERROR", "run", "-c", str(path)])
        assert result.exit_code == main.EXIT_CONFIG

    def test_numeric_abort(self, config_file: Path, monkeypatch: pytest.MonkeyPatch) -> None:
        def abort(*_: object) -> None:
            raise NumericAbortError("loss is nan", iteration=2)

        monkeypatch.setattr(main, "run_experiment", abort)
        result = runner.invoke(app, ["--log-level", "ERROR", "run", "-c", str(config_file)])
        assert result.exit_code == main.EXIT_NUMERIC
        assert "Numeric abort" in result.output


class TestSweep:
    """Tests for the sweep command."""

    def test_rows_follow_axis_order(self, config_file: Path, tmp_path: Path) -> None:
        out = tmp_path / "sweep.csv"
        result = runner.invoke(
            app,
            [
                "--log-level",
                "ERROR",
                "sweep",
                "-c",
                str(config_file),
                "--axis",
                "seed=0,1",
                "--axis",
                "objective=SFT,TRAJ_FKL",
                "-o",
                str(out),
            ],
        )
        assert result.exit_code == 0, result.output
        rows = list(csv.DictReader(io.StringIO(out.read_text())))
        assert [(r["seed"], r["objective"]) for r in rows] == [
            ("0", "SFT"),
            ("0", "TRAJ_FKL"),
            ("1", "SFT"),
            ("1", "TRAJ_FKL"),
        ]
        assert list(rows[0])[:2] == ["seed", "objective"]
        assert "mode_0" in rows[0]
        assert "4 experiments" in result.output

    def test_duplicate_axis(self, config_file: Path) -> None:
        result = runner.invoke(
            app,
            [
                "--log-level",
                "ERROR",
                "sweep",
                "-c",
                str(config_file),
                "-a",
                "seed=0,1",
                "-a",
                "seed=2",
            ],
        )
        assert result.exit_code == main.EXIT_CONFIG
        assert "only once" in result.output

    def test_malformed_axis(self, config_file: Path) -> None:
        result = runner.invoke(
            app, ["--log-level", "ERROR", "sweep", "-c", str(config_file), "-a", "seed"]
        )
        assert result.exit_code == main.EXIT_CONFIG


class TestBtfit:
    """Tests for the btfit command."""

    def test_writes_model(self, preferences_file: Path, tmp_path: Path) -> None:
        out = tmp_path / "model.csv"
        result = runner.invoke(
            app,
            [
                "--log-level",
                "ERROR",
                "btfit",
                "-d",
                str(preferences_file),
                "--variant",
                "simplified",
                "--heldout",
                "0",
                "-o",
                str(out),
            ],
        )
        assert result.exit_code == 0, result.output
        rows = list(csv.DictReader(io.StringIO(out.read_text())))
        assert {(r["prompt"], r["response"]) for r in rows} == {
            ("x", "a"),
            ("x", "b"),
            ("x", "c"),
            ("y", "p"),
            ("y", "q"),
        }
        assert all(float(r["V"]) == 1.0 for r in rows)
        assert "train_ce" in result.output

    def test_model_to_stdout(self, preferences_file: Path) -> None:
        result = runner.invoke(
            app,
            ["--log-level", "ERROR", "btfit", "-d", str(preferences_file), "--heldout", "0"],
        )
        assert result.exit_code == 0, result.output
        assert result.stdout.splitlines()[0] == "prompt,response,R,V"
        assert "heldout_ce" in result.output

    def test_domains_are_centered(self, preferences_file: Path, tmp_path: Path) -> None:
        domains = tmp_path / "domains.csv"
        domains.write_text("prompt,response,domain\nx,a,easy\nx,b,easy\nx,c,hard\n")
        out = tmp_path / "model.csv"
        result = runner.invoke(
            app,
            [
                "--log-level",
                "ERROR",
                "btfit",
                "-d",
                str(preferences_file),
                "--heldout",
                "0",
                "--domains",
                str(domains),
                "-o",
                str(out),
            ],
        )
        assert result.exit_code == 0, result.output
        rows = csv.DictReader(io.StringIO(out.read_text()))
        rewards = {r["response"]: float(r["R"]) for r in rows}
        assert rewards["a"] + rewards["b"] == pytest.approx(0.0, abs=1e-9)
        assert rewards["c"] == pytest.approx(0.0, abs=1e-9)

    def test_bad_data(self, tmp_path: Path) -> None:
        path = tmp_path / "prefs.csv"
        path.write_text("prompt,chosen,rejected\nx,a,b\n")
        result = runner.invoke(app, ["--log-level", "ERROR", "btfit", "-d", str(path)])
        assert result.exit_code == main.EXIT_CONFIG


class TestCheck:
    """Tests for the check command."""

    def test_quick_suite_passes(self, tmp_path: Path) -> None:
        out = tmp_path / "checks.json"
        result = runner.invoke(
            app, ["--log-level", "ERROR", "check", "--quick", "--seed", "1", "-o", str(out)]
        )
        assert result.exit_code == 0, result.output
        data = json.loads(out.read_text())
        assert data["passed"] is True
        assert out.with_suffix(".md").read_text().startswith("#")
        assert "All checks passed" in result.output

    def test_failure_exit_code(self, monkeypatch: pytest.MonkeyPatch) -> None:
        def failing(**_: object) -> CheckSuiteReport:
            report = CheckSuiteReport(quick=True, seed=0)
            report.results.append(CheckResult("rkl_identity", "broken", 1.0, 1e-6, 1))
            return report

        monkeypatch.setattr(main, "run_checks", failing)
        result = runner.invoke(app, ["--log-level", "ERROR", "check", "--quick"])
        assert result.exit_code == main.EXIT_CHECK_FAILED
        assert "rkl_identity" in result.output
