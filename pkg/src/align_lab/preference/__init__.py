"""Bradley-Terry preference modelling: win probabilities, synthetic data and fitting."""

from align_lab.preference.bradley_terry import (
    BTGroundTruth,
    BTRewardModel,
    PrefDataset,
    WinLink,
    bt_win_prob_gauss,
    bt_win_prob_tanh,
    ce_loss_full,
    ce_loss_simplified,
    sample_pref_dataset,
)
from align_lab.preference.fitting import (
    FitReport,
    FitVariant,
    fit_reward_model,
    mismatch_experiment,
    online_update,
    size_sweep,
)

__all__ = [
    "BTGroundTruth",
    "BTRewardModel",
    "FitReport",
    "FitVariant",
    "PrefDataset",
    "WinLink",
    "bt_win_prob_gauss",
    "bt_win_prob_tanh",
    "ce_loss_full",
    "ce_loss_simplified",
    "fit_reward_model",
    "mismatch_experiment",
    "online_update",
    "sample_pref_dataset",
    "size_sweep",
]
