"""Alternating adversary/policy training.

Each round takes ``disc_steps`` updates of the discriminator (or critic)
against the current policy, then ``policy_steps`` updates of the policy
against the frozen adversary, then records exact divergences to the
reference expert distribution.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Hashable, Mapping
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np

from align_lab.adversarial.discriminator import (
    Critic,
    Discriminator,
    Estimator,
    Granularity,
    PolicyView,
    _distribution,
    _vector,
    discriminator_loss,
    fgan_critic_loss,
    fgan_policy_loss,
    policy_js_loss,
    policy_rkl_loss,
)
from align_lab.adversarial.fdiv import FDivSpec
from align_lab.config import get_settings
from align_lab.core.exceptions import ConfigurationError, NumericAbortError
from align_lab.core.occupancy import DivergenceKind, TrajDist, divergence
from align_lab.core.policy import TabularPolicy
from align_lab.core.token_mdp import PromptDist
from align_lab.harness.optim import OptimizerConfig, OptimizerMethod, make_stepper
from align_lab.objectives.report import LossReport

logger = logging.getLogger("align_lab.adversarial.training")


class AdversarialObjective(str, Enum):
    """Which saddle problem the loop solves."""

    RKL = "rkl"
    JS = "js"
    FGAN = "fgan"


@dataclass(frozen=True)
class Schedule:
    """Alternation schedule and step sizes."""

    disc_steps: int = 50
    policy_steps: int = 1
    rounds: int = 200
    disc_step_size: float = 1.0
    policy_step_size: float = 0.5
    policy_method: OptimizerMethod = OptimizerMethod.GD
    precondition: bool = True
    estimator: Estimator = "exact"
    n_samples: int = 1000
    report_every: int = 10

    def __post_init__(self) -> None:
        for name in ("disc_steps", "policy_steps", "rounds", "n_samples", "report_every"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"Schedule.{name} must be a positive integer")
        if self.disc_step_size <= 0 or self.policy_step_size <= 0:
            raise ConfigurationError("Schedule step sizes must be positive")
        if self.policy_method is OptimizerMethod.LBFGS:
            raise ConfigurationError("Policy steps support gd or adam only")


@dataclass(frozen=True)
class HistoryRow:
    """Per-round losses and exact divergences to the reference."""

    round: int
    policy_loss: float
    disc_loss: float
    fkl: float | None
    rkl: float | None
    js: float | None
    disc_gap: float | None

    def as_dict(self) -> dict[str, Any]:
        return {
            "round": self.round,
            "policy_loss": self.policy_loss,
            "disc_loss": self.disc_loss,
            "fkl": self.fkl,
            "rkl": self.rkl,
            "js": self.js,
            "disc_gap": self.disc_gap,
        }


@dataclass
class TrainingHistory:
    """Rows of an alternating run plus the final policy and adversary."""

    rows: list[HistoryRow] = field(default_factory=list)
    policy: TabularPolicy | None = None
    adversary: Discriminator | Critic | None = None
    clamped: int = 0

    @property
    def final(self) -> HistoryRow:
        return self.rows[-1]


def _require_finite(values: dict[str, float | None], round_index: int) -> None:
    for name, value in values.items():
        if value is not None and not math.isfinite(value):
            raise NumericAbortError(
                f"Non-finite {name} in round {round_index}", round_index=round_index
            )


def _adversary_step(
    adversary: Discriminator | Critic,
    expert: Mapping[Hashable, float],
    current: Mapping[Hashable, float],
    schedule: Schedule,
    spec: FDivSpec | None,
) -> tuple[Discriminator | Critic, float]:
    """One gradient step on the adversary's loss; returns the new adversary and the pre-step loss.

    With preconditioning the gradient of every key is divided by its
    combined mass e + q.
    """
    if isinstance(adversary, Discriminator):
        report = discriminator_loss(adversary, expert, current)
    elif spec is None:
        raise ConfigurationError("A critic needs an f-divergence spec")
    else:
        report = fgan_critic_loss(adversary, expert, current, spec)
    grad = report.flat()
    if schedule.precondition:
        mass = _vector(expert, adversary.keys) + _vector(current, adversary.keys)
        grad = grad / np.where(mass > 0, mass, 1.0)
    eta = schedule.disc_step_size
    if isinstance(adversary, Discriminator):
        return adversary.with_logits(adversary.logits - eta * grad), report.value
    assert spec is not None
    stepped, _ = spec.clamp(adversary.values - eta * grad)
    return adversary.with_values(stepped), report.value


def _policy_loss(
    objective: AdversarialObjective,
    policy: TabularPolicy,
    adversary: Discriminator | Critic,
    prompts: PromptDist,
    schedule: Schedule,
    spec: FDivSpec | None,
    rng: np.random.Generator,
) -> LossReport:
    sampling: dict[str, Any] = {
        "estimator": schedule.estimator,
        "n_samples": schedule.n_samples,
        "rng_seed": rng,
    }
    if objective is AdversarialObjective.FGAN:
        if not isinstance(adversary, Critic) or spec is None:
            raise ConfigurationError("f-GAN training needs a critic and an f-divergence spec")
        return fgan_policy_loss(policy, adversary, spec, prompts=prompts)
    if not isinstance(adversary, Discriminator):
        raise ConfigurationError(f"{objective.value} training needs a discriminator")
    if objective is AdversarialObjective.RKL:
        return policy_rkl_loss(policy, adversary, prompts=prompts, **sampling)
    return policy_js_loss(policy, adversary, prompts=prompts, **sampling)


def trajectory_metrics(
    policy: TabularPolicy, reference: TrajDist | None, prompts: PromptDist
) -> dict[str, float | None]:
    """FKL(ref || pi), RKL = KL(pi || ref) and JS on joint trajectory distributions."""
    if reference is None:
        return {"fkl": None, "rkl": None, "js": None}
    view = PolicyView.build(policy, Granularity.TRAJECTORY, prompts)
    ours = dict(zip(view.keys, view.mass.tolist(), strict=True))
    ref = reference.as_distribution()
    return {
        "fkl": divergence(ref, ours, DivergenceKind.FKL, smoothing=True),
        "rkl": divergence(ref, ours, DivergenceKind.RKL, smoothing=True),
        "js": divergence(ref, ours, DivergenceKind.JS),
    }


def alternating_train(
    policy: TabularPolicy,
    adversary: Discriminator | Critic,
    schedule: Schedule,
    *,
    objective: AdversarialObjective,
    target: Any,
    prompts: PromptDist,
    reference: TrajDist | None = None,
    spec: FDivSpec | None = None,
    freeze_policy: bool = False,
    seed: int | None = None,
) -> TrainingHistory:
    """Run the alternating minimax loop.

    Args:
        policy: Initial policy; its contexts must cover the reachable tree.
        adversary: Initial discriminator or critic over the target's key space.
        schedule: Steps per round, rounds and step sizes.
        objective: RKL, JS or FGAN.
        target: Expert-side table (occupancy or trajectory distribution).
        prompts: Prompt distribution for exact policy expectations.
        reference: Expert trajectory distribution used for the divergence metrics.
        spec: f-divergence spec, required for FGAN.
        freeze_policy: Skip policy updates (adversary-only convergence runs).
        seed: Seed for the sampled estimator.

    Returns:
        The per-round history with the final policy and adversary.

    Raises:
        NumericAbortError: If a loss or metric becomes non-finite, with the round index.
    """
    config = OptimizerConfig(method=schedule.policy_method, step_size=schedule.policy_step_size)
    stepper = make_stepper(config)
    rng = np.random.default_rng(seed if seed is not None else get_settings().lab.default_seed)
    expert = dict(_distribution(target))
    history = TrainingHistory()

    for round_index in range(1, schedule.rounds + 1):
        view = PolicyView.build(policy, adversary.granularity, prompts)
        current = dict(zip(view.keys, view.mass.tolist(), strict=True))

        disc_loss = math.nan
        for _ in range(schedule.disc_steps):
            adversary, disc_loss = _adversary_step(adversary, expert, current, schedule, spec)

        policy_loss = math.nan
        steps = 1 if freeze_policy else schedule.policy_steps
        for _ in range(steps):
            report = _policy_loss(objective, policy, adversary, prompts, schedule, spec, rng)
            history.clamped += report.clamped
            policy_loss = report.value
            if not freeze_policy:
                policy = policy.with_vector(stepper.step(policy.to_vector(), report.flat()))

        metrics = trajectory_metrics(policy, reference, prompts)
        gap: float | None = None
        if isinstance(adversary, Discriminator):
            e = _vector(expert, adversary.keys)
            q = _vector(current, adversary.keys)
            gap = float(np.max(np.abs(adversary.output() - _optimal_output(e, q))))
        _require_finite(
            {"policy_loss": policy_loss, "disc_loss": disc_loss, **metrics}, round_index
        )
        history.rows.append(
            HistoryRow(
                round=round_index,
                policy_loss=policy_loss,
                disc_loss=disc_loss,
                fkl=metrics["fkl"],
                rkl=metrics["rkl"],
                js=metrics["js"],
                disc_gap=gap,
            )
        )
        if round_index % schedule.report_every == 0 or round_index == schedule.rounds:
            logger.debug(
                "round %d policy=%.6f adversary=%.6f",
                round_index,
                policy_loss,
                disc_loss,
                extra={"round": round_index, "objective": objective.value, "metrics": metrics},
            )

    history.policy = policy
    history.adversary = adversary
    logger.info(
        "Alternating %s training finished after %d rounds",
        objective.value,
        schedule.rounds,
        extra={"objective": objective.value, "metrics": history.final.as_dict()},
    )
    return history


def _optimal_output(e: np.ndarray, q: np.ndarray) -> np.ndarray:
    total = e + q
    return np.where(total > 0, e / np.where(total > 0, total, 1.0), 0.5)


def initial_adversary(
    policy: TabularPolicy,
    objective: AdversarialObjective,
    granularity: Granularity,
    prompts: PromptDist,
    spec: FDivSpec | None = None,
) -> Discriminator | Critic:
    """Neutral adversary on every reachable key: zero logits, or a critic at f'(1)."""
    keys = PolicyView.build(policy, granularity, prompts).keys
    if objective is AdversarialObjective.FGAN:
        if spec is None:
            raise ConfigurationError("f-GAN training needs an f-divergence spec")
        return Critic.initial(granularity, keys, spec)
    return Discriminator.zeros(granularity, keys)
