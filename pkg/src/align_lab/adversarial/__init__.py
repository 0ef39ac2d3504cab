"""Discriminators, f-divergence critics and alternating minimax training."""

from align_lab.adversarial.discriminator import (
    Critic,
    Discriminator,
    Granularity,
    discriminator_loss,
    dump_discriminator,
    fgan_critic_loss,
    fgan_policy_loss,
    js_minimax_value,
    load_discriminator,
    optimal_critic,
    optimal_discriminator,
    policy_js_loss,
    policy_rkl_loss,
)
from align_lab.adversarial.fdiv import FDivSpec, FFamily, f_conjugate, numeric_conjugate
from align_lab.adversarial.training import (
    AdversarialObjective,
    HistoryRow,
    Schedule,
    TrainingHistory,
    alternating_train,
    initial_adversary,
)

__all__ = [
    "AdversarialObjective",
    "Critic",
    "Discriminator",
    "FDivSpec",
    "FFamily",
    "Granularity",
    "HistoryRow",
    "Schedule",
    "TrainingHistory",
    "alternating_train",
    "discriminator_loss",
    "dump_discriminator",
    "f_conjugate",
    "fgan_critic_loss",
    "fgan_policy_loss",
    "initial_adversary",
    "js_minimax_value",
    "load_discriminator",
    "numeric_conjugate",
    "optimal_critic",
    "optimal_discriminator",
    "policy_js_loss",
    "policy_rkl_loss",
]
