"""Scenario builders and the restricted-class optimum oracle."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from enum import Enum

import numpy as np

from align_lab.adversarial.discriminator import Granularity, PolicyView
from align_lab.core.exceptions import ConfigurationError
from align_lab.core.occupancy import TrajDist, trajectory_distribution
from align_lab.core.policy import ContextOrder, ExpertSpec, TabularPolicy, boltzmann_expert
from align_lab.core.token_mdp import PromptDist, TrajKey, Vocab
from align_lab.harness.optim import OptimizerConfig, OptimizerMethod, optimize
from align_lab.harness.schemas import (
    EXACT,
    ExperimentConfig,
    ObjectiveKind,
    validate_config,
)
from align_lab.objectives.forward_kl import DemoDataset, traj_fkl_loss
from align_lab.objectives.report import LossReport

logger = logging.getLogger("align_lab.harness.scenarios")

LOW_DATA_SIZES: tuple[int | str, ...] = (4, 16, 64, 256, EXACT)


def build_bimodal_scenario(
    separation: float = 3.0,
    tau: float = 1.0,
    order: ContextOrder = 1,
    objective: ObjectiveKind = ObjectiveKind.TRAJ_FKL,
) -> ExperimentConfig:
    """Two high-reward responses ``a a EOS`` and ``b b EOS`` in a V=3, C=3 tree.

    Every other trajectory has reward 0, so the expert puts equal mass on the
    two modes.

    Raises:
        ConfigurationError: If separation is not positive.
    """
    if not separation > 0:
        raise ConfigurationError(f"separation must be positive, got {separation}")
    modes = [{"prompt": "", "response": "a|a|<eos>"}, {"prompt": "", "response": "b|b|<eos>"}]
    return validate_config(
        {
            "name": f"bimodal-sep{separation:g}-tau{tau:g}",
            "mdp": {"symbols": ["a", "b"], "capacity": 3},
            "expert": {
                "temperature": tau,
                "rewards": [{**m, "value": separation} for m in modes],
                "modes": modes,
            },
            "policy": {"order": order},
            "training": {
                "objective": ObjectiveKind(objective).value,
                "granularity": Granularity.TRAJECTORY.value,
                "dataset_size": EXACT,
            },
        }
    )


def low_data_sweep(
    config: ExperimentConfig,
    sizes: Sequence[int | str] = LOW_DATA_SIZES,
    seeds: Sequence[int] = (0,),
) -> list[ExperimentConfig]:
    """One config per (dataset size, seed), sizes outermost."""
    return [
        config.with_overrides({"training.dataset_size": size, "seed": seed})
        for size in sizes
        for seed in seeds
    ]


@dataclass(frozen=True)
class ExpertModel:
    """The exact expert of a config: policy, trajectory distribution and reward."""

    vocab: Vocab
    prompts: PromptDist
    policy: TabularPolicy
    dist: TrajDist
    rewards: dict[TrajKey, float]
    modes: tuple[TrajKey, ...]


def build_expert(config: ExperimentConfig) -> ExpertModel:
    vocab, prompts = config.build_mdp()
    reward = config.hidden_reward(vocab, prompts)
    spec = ExpertSpec(reward, config.expert.temperature)
    policy = boltzmann_expert(spec, vocab, prompts, config.mdp.capacity)
    modes = tuple(config.trajectory_key(vocab, ref) for ref in config.expert.modes)
    unknown = [m for m in modes if m not in reward.table]
    if unknown:
        raise ConfigurationError(f"Mode {unknown[0]} is not an enumerable trajectory")
    return ExpertModel(
        vocab,
        prompts,
        policy,
        trajectory_distribution(policy, prompts),
        dict(reward.table),
        modes,
    )


def mode_masses(dist: TrajDist, modes: Sequence[TrajKey]) -> list[float]:
    """Joint probability of each designated mode."""
    joint = dist.as_distribution()
    return [float(joint.get(m, 0.0)) for m in modes]


class RestrictedKind(str, Enum):
    FKL = "fkl"
    RKL = "rkl"


def _rkl_report(policy: TabularPolicy, expert: TrajDist, prompts: PromptDist) -> LossReport:
    """KL(d_pi || d_exp) with its exact gradient.

    With payoff log d_pi - log d_exp held fixed the score term vanishes in
    expectation, so the expectation gradient is the full gradient.
    """
    view = PolicyView.build(policy, Granularity.TRAJECTORY, prompts)
    joint = expert.as_distribution()
    target = np.array([joint.get(k, 0.0) for k in view.keys])
    with np.errstate(divide="ignore"):
        payoff = np.log(view.mass) - np.log(target)
    return view.expectation(payoff)


def restricted_optimum(
    kind: RestrictedKind,
    expert: TrajDist,
    vocab: Vocab,
    prompts: PromptDist,
    capacity: int,
    order: ContextOrder,
    *,
    starts: int = 8,
    seed: int = 0,
) -> tuple[TabularPolicy, float]:
    """Best policy of a context order for trajectory-level FKL or RKL.

    Multi-start L-BFGS from the uniform policy plus ``starts - 1`` random
    logit initializations; returns the policy with the lowest divergence.
    """
    kind = RestrictedKind(kind)
    base = TabularPolicy.uniform(vocab, capacity, order, prompts)
    data = DemoDataset.exact(expert)
    entropy = -sum(p * np.log(p) for p in expert.as_distribution().values() if p > 0)

    def fun(x: np.ndarray) -> LossReport:
        policy = base.with_vector(x)
        if kind is RestrictedKind.FKL:
            return traj_fkl_loss(policy, data)
        return _rkl_report(policy, expert, prompts)

    rng = np.random.default_rng(seed)
    config = OptimizerConfig(method=OptimizerMethod.LBFGS, max_iters=5000, grad_tol=1e-10)
    best: tuple[TabularPolicy, float] | None = None
    for start in range(starts):
        x0 = base.to_vector() if start == 0 else rng.normal(scale=2.0, size=base.n_params)
        result = optimize(fun, x0, config)
        value = result.value - entropy if kind is RestrictedKind.FKL else result.value
        if best is None or value < best[1]:
            best = (base.with_vector(result.x), float(value))
    assert best is not None
    logger.debug("Restricted %s optimum over %d starts: %.8f", kind.value, starts, best[1])
    return best
