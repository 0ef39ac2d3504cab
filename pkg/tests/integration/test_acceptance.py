"""End-to-end acceptance runs at full instance counts.

Each test exercises one headline property on the number of random instances
it is meant to hold for. They take seconds to a minute each, so they are
marked ``slow``; deselect with ``-m "not slow"``.
"""

from __future__ import annotations

import json
import logging
from collections.abc import Iterator
from pathlib import Path

import numpy as np
import pytest
from typer.testing import CliRunner

from align_lab.core.occupancy import trajectory_distribution
from align_lab.harness import checks
from align_lab.harness.experiment import execute_experiment
from align_lab.harness.scenarios import (
    RestrictedKind,
    build_expert,
    mode_masses,
    restricted_optimum,
)
from align_lab.harness.schemas import load_experiment_config
from align_lab.hooks import logging as logging_hooks
from align_lab.main import app
from align_lab.preference.bradley_terry import BTGroundTruth
from align_lab.preference.fitting import FitVariant, heteroscedastic_truth, recovery_experiment
from align_lab.utils.templates import render_check_report

pytestmark = pytest.mark.slow

CONFIGS = Path(__file__).resolve().parents[2] / "configs"


def _rng(seed: int = 0) -> np.random.Generator:
    return np.random.default_rng(seed)


class TestForwardKL:
    """SFT and trajectory-level forward KL are the same objective."""

    def test_gradients_parallel_on_20_datasets(self) -> None:
        assert checks.check_sft_traj_parallel(_rng(), 20) <= 1e-10

    def test_matched_training_on_20_datasets(self) -> None:
        assert checks.check_matched_training(_rng(1), 20) <= 1e-8


class TestAdversarialIdentities:
    """Closed-form and trained discriminators against direct divergences."""

    def test_trained_discriminator(self) -> None:
        assert checks.check_trained_discriminator(_rng(2), 3) <= 1e-3

    def test_rkl_identity_on_20_instances(self) -> None:
        assert checks.check_rkl_identity(_rng(3), 20) <= 1e-6

    def test_js_identity_on_20_instances(self) -> None:
        assert checks.check_js_identity(_rng(3), 20) <= 1e-6

    def test_js_with_trained_discriminator(self) -> None:
        assert checks.check_trained_js(_rng(4), 3) <= 1e-3

    def test_fgan_tightness_on_20_instances(self) -> None:
        assert checks.check_fgan_tightness(_rng(5), 20) <= 1e-4

    def test_conjugates(self) -> None:
        assert checks.check_conjugates(_rng(), 1) <= 1e-6

    def test_correspondence_on_100_pairs(self) -> None:
        assert checks.check_correspondence(_rng(6), 100) <= 1e-9

    def test_gradient_integrity(self) -> None:
        assert checks.check_gradients(_rng(7), 3) <= 1e-5


class TestWeightingAudit:
    """The audit over 10 instances runs and renders."""

    def test_report_renders(self) -> None:
        audit = checks.weighting_audit(n_instances=10, seed=0)
        assert len(audit) == 10
        assert all(len(item.cosines) == len(item.iterations) for item in audit)
        report = checks.CheckSuiteReport(quick=True, seed=0)
        report.audit.extend(audit)
        markdown = render_check_report(report.as_dict())
        assert "| 9 |" in markdown


class TestModeSeeking:
    """Order-1 policies on the bimodal expert land on their restricted optima."""

    def test_fkl_and_rkl_against_oracle(self) -> None:
        fkl_config = load_experiment_config(CONFIGS / "bimodal.toml")
        rkl_config = load_experiment_config(CONFIGS / "bimodal-rkl.toml")
        expert = build_expert(fkl_config)

        def oracle(kind: RestrictedKind) -> list[float]:
            policy, _ = restricted_optimum(
                kind, expert.dist, expert.vocab, expert.prompts, fkl_config.mdp.capacity, 1
            )
            return mode_masses(trajectory_distribution(policy, expert.prompts), expert.modes)

        def trained(config_path: str) -> list[float]:
            run = execute_experiment(load_experiment_config(CONFIGS / config_path))
            return mode_masses(trajectory_distribution(run.policy, expert.prompts), expert.modes)

        assert fkl_config.mdp.capacity == rkl_config.mdp.capacity
        fkl_oracle, rkl_oracle = oracle(RestrictedKind.FKL), oracle(RestrictedKind.RKL)
        fkl, rkl = trained("bimodal.toml"), trained("bimodal-rkl.toml")

        assert fkl == pytest.approx(fkl_oracle, abs=1e-2)
        assert max(rkl) == pytest.approx(max(rkl_oracle), abs=1e-2)
        assert max(rkl) > max(fkl)
        assert min(fkl) > 0.3


class TestBradleyTerry:
    """Reward-model recovery on synthetic comparisons."""

    def test_full_fit_recovers_gaps(self) -> None:
        scores = dict(zip("abcdef", [-1.5, -0.9, -0.3, 0.3, 0.9, 1.5], strict=True))
        variances = dict(zip("abcdef", [0.5, 1.0, 2.0, 0.5, 1.0, 2.0], strict=True))
        truth = BTGroundTruth(
            {("x", y): r for y, r in scores.items()},
            {("x", y): v for y, v in variances.items()},
        )
        report = recovery_experiment(truth, truth.all_pairs(), 50_000, FitVariant.FULL)
        assert report.max_gap_error <= 0.1
        assert report.kendall_tau == pytest.approx(1.0)

    def test_full_beats_simplified_on_heteroscedastic_data(self) -> None:
        truth = heteroscedastic_truth()
        pairs = truth.all_pairs()
        wins = 0
        for seed in range(20):
            full = recovery_experiment(truth, pairs, 5000, FitVariant.FULL, seed=seed)
            simple = recovery_experiment(truth, pairs, 5000, FitVariant.SIMPLIFIED, seed=seed)
            assert full.fit.heldout_ce is not None
            assert simple.fit.heldout_ce is not None
            wins += full.fit.heldout_ce <= simple.fit.heldout_ce
        assert wins >= 18


@pytest.fixture
def clean_logger(monkeypatch: pytest.MonkeyPatch) -> Iterator[None]:
    package = logging.getLogger("align_lab")
    handlers, level, propagate = list(package.handlers), package.level, package.propagate
    monkeypatch.setattr(logging_hooks, "_logging_configured", False)
    yield
    package.handlers[:] = handlers
    package.setLevel(level)
    package.propagate = propagate


class TestReproducibility:
    """Two identical runs through the CLI agree apart from wall-clock time."""

    @pytest.mark.usefixtures("clean_logger")
    def test_identical_reports(self, tmp_path: Path) -> None:
        runner = CliRunner()
        reports = []
        for name in ("first.json", "second.json"):
            out = tmp_path / name
            result = runner.invoke(
                app,
                [
                    "--log-level",
                    "ERROR",
                    "run",
                    "-c",
                    str(CONFIGS / "base.toml"),
                    "--seed",
                    "7",
                    "-o",
                    str(out),
                ],
            )
            assert result.exit_code == 0, result.output
            data = json.loads(out.read_text())
            data.pop("wall_clock_s")
            reports.append(data)
        assert reports[0] == reports[1]
