"""Experiment runner: expert, data, training and metrics from one config."""

from __future__ import annotations

import logging
from collections.abc import Callable
from dataclasses import dataclass
from typing import Any

import numpy as np

from align_lab.adversarial.discriminator import (
    Granularity,
    fgan_policy_loss,
    policy_js_loss,
    policy_rkl_loss,
)
from align_lab.adversarial.training import (
    AdversarialObjective,
    alternating_train,
    initial_adversary,
    trajectory_metrics,
)
from align_lab.core.exceptions import LabError
from align_lab.core.occupancy import (
    OccupancyTable,
    TrajDist,
    empirical_occupancy,
    empirical_traj_dist,
    exact_occupancy,
    trajectory_distribution,
)
from align_lab.core.policy import TabularPolicy, sample_dataset
from align_lab.harness.optim import optimize
from align_lab.harness.scenarios import ExpertModel, build_expert, mode_masses
from align_lab.harness.schemas import (
    ExperimentConfig,
    MetricsReport,
    ObjectiveKind,
    RoundMetrics,
    StepScaling,
)
from align_lab.hooks.performance import Timer
from align_lab.objectives.forward_kl import (
    DemoDataset,
    exact_fkl_occupancy_loss,
    sft_loss,
    traj_fkl_loss,
    weighted_fkl_loss,
)
from align_lab.objectives.report import LossReport

logger = logging.getLogger("align_lab.harness.experiment")

# Each objective kind maps to exactly one policy-side loss.
OBJECTIVE_OPERATIONS: dict[ObjectiveKind, Callable[..., LossReport]] = {
    ObjectiveKind.SFT: sft_loss,
    ObjectiveKind.WFKL: weighted_fkl_loss,
    ObjectiveKind.TRAJ_FKL: traj_fkl_loss,
    ObjectiveKind.EXACT_FKL: exact_fkl_occupancy_loss,
    ObjectiveKind.RKL_ADV: policy_rkl_loss,
    ObjectiveKind.JS_ADV: policy_js_loss,
    ObjectiveKind.FGAN: fgan_policy_loss,
}

_ADVERSARIAL = {
    ObjectiveKind.RKL_ADV: AdversarialObjective.RKL,
    ObjectiveKind.JS_ADV: AdversarialObjective.JS,
    ObjectiveKind.FGAN: AdversarialObjective.FGAN,
}


@dataclass(frozen=True)
class ExpertData:
    """Expert-side training inputs, exact or sampled."""

    demos: DemoDataset
    occupancy: OccupancyTable
    trajectories: TrajDist


def expert_data(config: ExperimentConfig, expert: ExpertModel) -> ExpertData:
    """Exact expert tables, or N demonstrations drawn with the config seed."""
    if config.exact_data:
        return ExpertData(
            DemoDataset.exact(expert.dist),
            exact_occupancy(expert.policy, expert.prompts),
            expert.dist,
        )
    size = int(config.training.dataset_size)
    sample = sample_dataset(expert.policy, expert.prompts, size, config.seed)
    return ExpertData(
        DemoDataset.from_trajectories(sample),
        empirical_occupancy(sample),
        empirical_traj_dist(sample),
    )


@dataclass(frozen=True)
class ExperimentRun:
    report: MetricsReport
    policy: TabularPolicy


@dataclass
class _Outcome:
    policy: TabularPolicy
    history: list[RoundMetrics]
    converged: bool
    iterations: int
    disc_gap: float | None = None


def _round_metrics(
    index: int,
    loss: float,
    policy: TabularPolicy,
    expert: ExpertModel,
    **extra: Any,
) -> RoundMetrics:
    metrics = trajectory_metrics(policy, expert.dist, expert.prompts)
    return RoundMetrics(
        round=index,
        loss=loss,
        fkl=metrics["fkl"] or 0.0,
        rkl=metrics["rkl"] or 0.0,
        js=metrics["js"] or 0.0,
        **extra,
    )


def _train_direct(
    config: ExperimentConfig,
    expert: ExpertModel,
    data: ExpertData,
    policy0: TabularPolicy,
) -> _Outcome:
    kind = config.objective
    operation = OBJECTIVE_OPERATIONS[kind]

    per_trajectory = config.training.step_scaling is StepScaling.PER_TRAJECTORY

    def loss(policy: TabularPolicy) -> LossReport:
        if kind is ObjectiveKind.EXACT_FKL:
            return operation(policy, data.occupancy, prompts=expert.prompts)
        if kind is ObjectiveKind.SFT and per_trajectory:
            return sft_loss(policy, data.demos, per_trajectory=True)
        return operation(policy, data.demos)

    opt = config.optimizer
    history: list[RoundMetrics] = []

    def record(iteration: int, x: np.ndarray, value: float) -> None:
        if iteration % opt.report_every == 0:
            history.append(_round_metrics(iteration, value, policy0.with_vector(x), expert))

    result = optimize(lambda x: loss(policy0.with_vector(x)), policy0.to_vector(), opt, record)
    policy = policy0.with_vector(result.x)
    if not history or history[-1].round != result.iterations:
        history.append(_round_metrics(result.iterations, result.value, policy, expert))
    return _Outcome(policy, history, result.converged, result.iterations)


def _train_adversarial(
    config: ExperimentConfig,
    expert: ExpertModel,
    data: ExpertData,
    policy0: TabularPolicy,
) -> _Outcome:
    objective = _ADVERSARIAL[config.objective]
    granularity = config.training.granularity
    spec = config.fdiv_spec() if objective is AdversarialObjective.FGAN else None
    target: Any = data.occupancy if granularity is Granularity.STATE_ACTION else data.trajectories
    adversary = initial_adversary(policy0, objective, granularity, expert.prompts, spec)
    schedule = config.adversarial.schedule()
    trained = alternating_train(
        policy0,
        adversary,
        schedule,
        objective=objective,
        target=target,
        prompts=expert.prompts,
        reference=expert.dist,
        spec=spec,
        seed=config.seed + 1,
    )
    history = [
        RoundMetrics(
            round=row.round,
            loss=row.policy_loss,
            adversary_loss=row.disc_loss,
            fkl=row.fkl or 0.0,
            rkl=row.rkl or 0.0,
            js=row.js or 0.0,
            disc_gap=row.disc_gap,
        )
        for row in trained.rows
        if row.round % schedule.report_every == 0 or row.round == schedule.rounds
    ]
    assert trained.policy is not None
    return _Outcome(trained.policy, history, True, schedule.rounds, trained.final.disc_gap)


def execute_experiment(config: ExperimentConfig) -> ExperimentRun:
    """Run one experiment end to end, keeping the trained policy.

    The same (config, seed) always yields the same report apart from
    ``wall_clock_s``. Demonstrations are drawn with ``seed`` and the sampled
    adversarial estimator uses ``seed + 1``.

    Raises:
        LabError: Any module error, with ``config_hash`` and ``objective`` added
            to its context.
    """
    config_hash = config.config_hash()
    extra = {"experiment": config.name, "objective": config.objective.value}
    logger.info("Running %s (%s)", config.name, config.objective.value, extra=extra)
    try:
        with Timer(config.name) as timer:
            expert = build_expert(config)
            data = expert_data(config, expert)
            policy0 = TabularPolicy.uniform(
                expert.vocab, config.mdp.capacity, config.context_order, expert.prompts
            )
            if config.objective.adversarial:
                outcome = _train_adversarial(config, expert, data, policy0)
            else:
                outcome = _train_direct(config, expert, data, policy0)
            dist = trajectory_distribution(outcome.policy, expert.prompts)
            joint = dist.as_distribution()
            final = trajectory_metrics(outcome.policy, expert.dist, expert.prompts)
            expected_reward = float(
                sum(mass * expert.rewards[key] for key, mass in joint.items())
            )
    except LabError as e:
        e.with_context(config_hash=config_hash, objective=config.objective.value)
        raise

    report = MetricsReport(
        name=config.name,
        objective=config.objective.value,
        seed=config.seed,
        config_hash=config_hash,
        fkl=final["fkl"] or 0.0,
        rkl=final["rkl"] or 0.0,
        js=final["js"] or 0.0,
        mode_mass=mode_masses(dist, expert.modes),
        expected_reward=expected_reward,
        disc_gap=outcome.disc_gap,
        converged=outcome.converged,
        iterations=outcome.iterations,
        wall_clock_s=timer.duration_s,
        history=outcome.history,
    )
    logger.info(
        "Finished %s: fkl=%.3e rkl=%.3e js=%.3e",
        config.name,
        report.fkl,
        report.rkl,
        report.js,
        extra={**extra, "metrics": report.summary_row()},
    )
    return ExperimentRun(report, outcome.policy)


def run_experiment(config: ExperimentConfig) -> MetricsReport:
    """Run one experiment and return its metrics report."""
    return execute_experiment(config).report
