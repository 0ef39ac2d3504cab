"""Forward-KL family objectives with analytic softmax gradients.

All three dataset objectives are weighted negative log-likelihoods over the
per-step (state, action) records of a demonstration set and differ only in
the record coefficients and the normalizer:

- ``sft_loss``: every record weighs 1, mean over steps
- ``weighted_fkl_loss``: record k of a K-terminal response weighs (K-k)/K, mean over records
- ``traj_fkl_loss``: every record weighs 1, mean over trajectories

``exact_fkl_occupancy_loss`` is the enumeration oracle these approximate.
"""

from __future__ import annotations

import logging
from collections.abc import Iterable
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import log_softmax, softmax

from align_lab.core.exceptions import ContextKeyError, DomainError, SupportMismatchError
from align_lab.core.occupancy import DemoPair, OccupancyTable, TrajDist, as_pairs
from align_lab.core.policy import ContextKey, ContextOrder, TabularPolicy, prefix_context
from align_lab.core.prefix_tree import build_prefix_tree
from align_lab.core.token_mdp import PromptDist, Trajectory
from align_lab.objectives.report import LossReport

logger = logging.getLogger("align_lab.objectives")


@dataclass(frozen=True)
class StepRecords:
    """Per-step records of a dataset, flattened into parallel arrays."""

    contexts: tuple[ContextKey, ...]
    actions: np.ndarray
    pair: np.ndarray
    step: np.ndarray
    terminal: np.ndarray


@dataclass(frozen=True, eq=False)
class DemoDataset:
    """Demonstration pairs, optionally weighted.

    Unweighted sets count every pair once. The exact mode stores the
    expert's full support with its joint probabilities as weights, so every
    objective becomes an expectation under the expert.
    """

    pairs: tuple[DemoPair, ...]
    weights: np.ndarray | None = None
    _records: dict[ContextOrder, StepRecords] = field(
        default_factory=dict, init=False, repr=False
    )

    def __post_init__(self) -> None:
        if not self.pairs:
            raise DomainError("Dataset is empty")
        if any(not response for _, response in self.pairs):
            raise DomainError("Every response needs at least one token")
        if self.weights is not None:
            weights = np.asarray(self.weights, dtype=np.float64)
            if weights.shape != (len(self.pairs),) or np.any(weights < 0):
                raise DomainError("Weights must be one non-negative value per pair")
            if weights.sum() <= 0:
                raise DomainError("Dataset weights sum to zero")
            object.__setattr__(self, "weights", weights)

    @classmethod
    def from_trajectories(cls, data: Iterable[Trajectory | DemoPair]) -> DemoDataset:
        return cls(pairs=tuple(as_pairs(data)))

    @classmethod
    def exact(cls, dist: TrajDist) -> DemoDataset:
        """Every support trajectory weighted by its joint probability."""
        joint = dist.as_distribution()
        keys = [k for k in sorted(joint) if joint[k] > 0]
        return cls(
            pairs=tuple(keys),
            weights=np.array([joint[k] for k in keys]),
        )

    @cached_property
    def pair_weights(self) -> np.ndarray:
        if self.weights is None:
            return np.ones(len(self.pairs))
        return self.weights

    @property
    def n_traj(self) -> float:
        """Total trajectory weight (the pair count when unweighted)."""
        return float(self.pair_weights.sum())

    @property
    def n_steps(self) -> float:
        lengths = np.array([len(r) for _, r in self.pairs], dtype=np.float64)
        return float(np.dot(self.pair_weights, lengths))

    def records(self, order: ContextOrder, vocab_action_index: dict[int, int]) -> StepRecords:
        """Per-step records under a context order (cached per order)."""
        cached = self._records.get(order)
        if cached is not None:
            return cached
        contexts: list[ContextKey] = []
        actions: list[int] = []
        pair_idx: list[int] = []
        steps: list[int] = []
        terminal: list[int] = []
        for i, (prompt, response) in enumerate(self.pairs):
            big_k = len(response) - 1
            for k, action in enumerate(response):
                contexts.append(prefix_context(order, prompt, response[:k]))
                try:
                    actions.append(vocab_action_index[action])
                except KeyError:
                    raise DomainError(f"Token {action} is not a legal action") from None
                pair_idx.append(i)
                steps.append(k)
                terminal.append(big_k)
        records = StepRecords(
            contexts=tuple(contexts),
            actions=np.asarray(actions, dtype=np.intp),
            pair=np.asarray(pair_idx, dtype=np.intp),
            step=np.asarray(steps, dtype=np.intp),
            terminal=np.asarray(terminal, dtype=np.intp),
        )
        self._records[order] = records
        return records

    def contexts(self, order: ContextOrder) -> set[ContextKey]:
        """Every context key the dataset visits under an order."""
        return {
            prefix_context(order, prompt, response[:k])
            for prompt, response in self.pairs
            for k in range(len(response))
        }


def _action_index(policy: TabularPolicy) -> dict[int, int]:
    return {tok: i for i, tok in enumerate(policy.vocab.action_ids)}


def weighted_nll(
    policy: TabularPolicy,
    records: StepRecords,
    coef: np.ndarray,
    denom: float,
) -> LossReport:
    """-(1/denom) sum_r coef_r log pi(a_r|s_r) and its logit gradient."""
    index = policy.key_index
    try:
        rows = np.fromiter((index[c] for c in records.contexts), np.intp, len(records.contexts))
    except KeyError as exc:
        raise ContextKeyError(str(exc.args[0])) from None
    logits = policy.matrix()
    log_pi = log_softmax(logits, axis=1)
    scaled = coef / denom
    value = -float(np.sum(scaled * log_pi[rows, records.actions]))
    grad = np.zeros_like(logits)
    np.add.at(grad, (rows, records.actions), -scaled)
    row_mass = np.bincount(rows, weights=scaled, minlength=len(logits))
    grad += row_mass[:, None] * softmax(logits, axis=1)
    return LossReport(value, grad, policy.keys, policy.vocab.action_ids)


def sft_loss(
    policy: TabularPolicy, data: DemoDataset, *, per_trajectory: bool = False
) -> LossReport:
    """Mean negative log-likelihood over all per-step records.

    With ``per_trajectory`` the sum is divided by the trajectory weight
    instead of the step count, which rescales loss and gradient by
    n_steps / n_traj and makes the result identical to ``traj_fkl_loss``.

    Raises:
        ContextKeyError: If a record's context is missing from the policy.
    """
    records = data.records(policy.context_order, _action_index(policy))
    coef = data.pair_weights[records.pair]
    denom = data.n_traj if per_trajectory else data.n_steps
    return weighted_nll(policy, records, coef, denom)


def position_weights(step: np.ndarray, terminal: np.ndarray) -> np.ndarray:
    """(K - k)/K per record, with 0/0 taken as 1 for single-token responses."""
    big_k = terminal.astype(np.float64)
    safe = np.where(big_k > 0, big_k, 1.0)
    return np.where(big_k > 0, (big_k - step) / safe, 1.0)


def weighted_fkl_loss(policy: TabularPolicy, data: DemoDataset) -> LossReport:
    """Position-reweighted NLL: record k of a K-terminal response weighs (K-k)/K."""
    records = data.records(policy.context_order, _action_index(policy))
    pair_w = data.pair_weights[records.pair]
    coef = pair_w * position_weights(records.step, records.terminal)
    return weighted_nll(policy, records, coef, float(pair_w.sum()))


def traj_fkl_loss(policy: TabularPolicy, data: DemoDataset) -> LossReport:
    """Mean over trajectories of the negative trajectory log-likelihood."""
    records = data.records(policy.context_order, _action_index(policy))
    coef = data.pair_weights[records.pair]
    return weighted_nll(policy, records, coef, data.n_traj)


def prompts_of(table: OccupancyTable) -> PromptDist:
    """Prompt distribution carried by a table, or read off its level-0 masses."""
    if table.prompt_dist is not None:
        return table.prompt_dist
    level0: dict[tuple[int, ...], float] = {}
    for (prompt, generated, _), mass in sorted(table.entries.items()):
        if not generated:
            level0[prompt] = level0.get(prompt, 0.0) + mass
    total = sum(level0.values())
    if total <= 0:
        raise DomainError("Occupancy table has no level-0 mass")
    prompts = sorted(level0)
    probs = [level0[p] / total for p in prompts]
    probs[-1] = 1.0 - sum(probs[:-1])
    return PromptDist(tuple(prompts), tuple(probs))


def exact_fkl_occupancy_loss(
    policy: TabularPolicy,
    rho_exp: OccupancyTable,
    *,
    prompts: PromptDist | None = None,
) -> LossReport:
    """KL(rho_hat_exp || rho_hat_pi) over the reachable tree, by enumeration.

    With Z the policy's total occupancy, the gradient is
    -psg(rho_hat_exp) + psg(rho_pi)/Z where psg is the path-score gradient.

    Raises:
        EnumerationBudgetError: If the tree exceeds the enumeration budget.
        SupportMismatchError: If the expert table has keys outside the tree.
    """
    prompt_dist = prompts or prompts_of(rho_exp)
    tree = build_prefix_tree(policy.vocab, prompt_dist, policy.capacity)
    unknown = [k for k in rho_exp.entries if k not in tree.sa_index and rho_exp.entries[k] > 0]
    if unknown:
        raise SupportMismatchError("Expert occupancy has keys outside the tree", key=unknown[0])
    ev = tree.evaluate(policy, gamma=rho_exp.gamma)
    expert = rho_exp.vector(tree.sa_keys)
    expert = expert / expert.sum()
    z = float(ev.rho.sum())
    mask = expert > 0
    log_ratio = np.log(expert[mask]) - (np.log(ev.rho[mask]) - np.log(z))
    value = float(np.sum(expert[mask] * log_ratio))
    n_ctx = len(policy.keys)
    grad = -ev.path_score_gradient(expert, n_ctx) + ev.path_score_gradient(ev.rho, n_ctx) / z
    return LossReport(max(value, 0.0), grad, policy.keys, policy.vocab.action_ids)
