"""Forward-KL family objectives.

- sft_loss: per-step behaviour cloning
- weighted_fkl_loss: position-reweighted occupancy surrogate
- traj_fkl_loss: trajectory-level forward KL
- exact_fkl_occupancy_loss: the enumerated occupancy KL
"""

from align_lab.objectives.forward_kl import (
    DemoDataset,
    exact_fkl_occupancy_loss,
    sft_loss,
    traj_fkl_loss,
    weighted_fkl_loss,
)
from align_lab.objectives.gradcheck import finite_diff_gradient, relative_error
from align_lab.objectives.report import LossReport, cosine_similarity

__all__ = [
    "DemoDataset",
    "LossReport",
    "cosine_similarity",
    "exact_fkl_occupancy_loss",
    "finite_diff_gradient",
    "relative_error",
    "sft_loss",
    "traj_fkl_loss",
    "weighted_fkl_loss",
]
