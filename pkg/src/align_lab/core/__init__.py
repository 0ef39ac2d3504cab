"""Token MDP, tabular policies and exact occupancy measures.

This package contains the ground-truth layer every objective is checked against:
- token_mdp: vocabulary, states, trajectories and enumeration
- policy: tabular softmax policies and the Boltzmann expert
- prefix_tree: compiled trees for exact evaluation and gradients
- occupancy: occupancy tables, trajectory distributions and divergences
"""

from align_lab.core.exceptions import (
    ConfigurationError,
    ContextKeyError,
    DomainError,
    EnumerationBudgetError,
    LabError,
    NumericAbortError,
    SupportMismatchError,
)
from align_lab.core.occupancy import (
    DivergenceKind,
    OccupancyTable,
    TrajDist,
    divergence,
    empirical_occupancy,
    empirical_traj_dist,
    exact_occupancy,
    trajectory_distribution,
)
from align_lab.core.policy import (
    FULL,
    ContextKey,
    ExpertSpec,
    TabularPolicy,
    action_distribution,
    boltzmann_expert,
    logprob_trajectory,
    project_context,
    sample_dataset,
    sample_response,
)
from align_lab.core.prefix_tree import PrefixTree, build_prefix_tree
from align_lab.core.token_mdp import (
    PromptDist,
    State,
    TerminalReward,
    Trajectory,
    Vocab,
    concat_transition,
    count_trajectories,
    enumerate_trajectories,
    is_terminal,
    terminal_reward,
)

__all__ = [
    "FULL",
    "ConfigurationError",
    "ContextKey",
    "ContextKeyError",
    "DivergenceKind",
    "DomainError",
    "EnumerationBudgetError",
    "ExpertSpec",
    "LabError",
    "NumericAbortError",
    "OccupancyTable",
    "PrefixTree",
    "PromptDist",
    "State",
    "SupportMismatchError",
    "TabularPolicy",
    "TerminalReward",
    "TrajDist",
    "Trajectory",
    "Vocab",
    "action_distribution",
    "boltzmann_expert",
    "build_prefix_tree",
    "concat_transition",
    "count_trajectories",
    "divergence",
    "empirical_occupancy",
    "empirical_traj_dist",
    "enumerate_trajectories",
    "exact_occupancy",
    "is_terminal",
    "logprob_trajectory",
    "project_context",
    "sample_dataset",
    "sample_response",
    "terminal_reward",
    "trajectory_distribution",
]
