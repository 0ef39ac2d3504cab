"""Tabular autoregressive softmax policies.

A policy maps a context key to a logit vector over the legal actions (every
token but MASK). The context key is derived from the state by
``project_context``: the full prefix for FULL-order policies, or the last
``order`` tokens for the restricted n-gram policy classes.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal, TypeAlias

import numpy as np
from scipy.special import log_softmax, logsumexp, softmax

from align_lab.core.exceptions import ContextKeyError, DomainError
from align_lab.core.token_mdp import (
    PromptDist,
    State,
    TerminalReward,
    TokenSeq,
    Trajectory,
    Vocab,
    check_budget,
    check_trajectory,
    concat_transition,
    enumerate_states,
    format_seq,
    initial_state,
    is_terminal,
    parse_seq,
    terminal_reward,
)

logger = logging.getLogger("align_lab.core.policy")

FULL: Literal["full"] = "full"
ContextOrder: TypeAlias = int | Literal["full"]


@dataclass(frozen=True, order=True)
class ContextKey:
    """Conditioning key of a policy row.

    Anchored keys hold a whole prefix and remember where the prompt ends,
    so equal token strings under different prompts stay distinct. Floating
    keys hold only the trailing tokens and carry no position.
    """

    tokens: TokenSeq
    anchored: bool
    prompt_len: int = 0

    def __str__(self) -> str:
        if self.anchored:
            head, tail = self.tokens[: self.prompt_len], self.tokens[self.prompt_len :]
            return f"^{format_seq(head)}|{format_seq(tail)}"
        return f"~{format_seq(self.tokens)}"

    @classmethod
    def parse(cls, text: str) -> ContextKey:
        """Inverse of ``str(key)``."""
        if text.startswith("^"):
            head, sep, tail = text[1:].partition("|")
            if not sep:
                raise DomainError(f"Malformed anchored context key: {text!r}")
            prompt = parse_seq(head)
            return cls(prompt + parse_seq(tail), True, len(prompt))
        if text.startswith("~"):
            return cls(parse_seq(text[1:]), False, 0)
        raise DomainError(f"Malformed context key: {text!r}")


def check_order(order: ContextOrder) -> None:
    if order != FULL and (not isinstance(order, int) or order < 0):
        raise DomainError(f"Context order must be a non-negative int or {FULL!r}, got {order!r}")


def project_context(policy_order: ContextOrder, state: State) -> ContextKey:
    """Project a state onto the context key used by a policy of the given order.

    The key is the last min(order, n) tokens of prompt+generated. When the
    order covers the whole prefix the anchored full-prefix key is returned,
    which is also what FULL returns.
    """
    return prefix_context(policy_order, state.prompt, state.generated)


def prefix_context(order: ContextOrder, prompt: TokenSeq, generated: TokenSeq) -> ContextKey:
    """``project_context`` on a raw (prompt, generated) pair."""
    prefix = prompt + generated
    n = len(prefix)
    if order == FULL or order >= n:
        return ContextKey(prefix, True, len(prompt))
    return ContextKey(prefix[n - order :], False, 0)


def reachable_contexts(
    vocab: Vocab,
    prompt_dist: PromptDist,
    capacity: int,
    order: ContextOrder,
) -> list[ContextKey]:
    """Sorted context keys of every reachable non-terminal state."""
    keys = {
        project_context(order, state)
        for prompt in prompt_dist.prompts
        for state in enumerate_states(vocab, prompt, capacity)
    }
    return sorted(keys)


@dataclass(frozen=True, eq=False)
class TabularPolicy:
    """Per-context softmax logits over the legal actions."""

    vocab: Vocab
    capacity: int
    context_order: ContextOrder
    logits: Mapping[ContextKey, np.ndarray] = field(repr=False)
    _matrix: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        check_order(self.context_order)
        width = self.vocab.n_actions
        keys = sorted(self.logits)
        matrix = np.zeros((len(keys), width))
        for i, key in enumerate(keys):
            vec = np.asarray(self.logits[key], dtype=np.float64)
            if vec.shape != (width,):
                raise DomainError(
                    f"Logit vector for {key} has shape {vec.shape}, expected ({width},)"
                )
            if not np.all(np.isfinite(vec)):
                raise DomainError(f"Non-finite logits for context {key}")
            matrix[i] = vec
        matrix.setflags(write=False)
        object.__setattr__(self, "_matrix", matrix)
        object.__setattr__(self, "logits", {key: matrix[i] for i, key in enumerate(keys)})

    @classmethod
    def uniform(
        cls,
        vocab: Vocab,
        capacity: int,
        order: ContextOrder,
        prompt_dist: PromptDist,
    ) -> TabularPolicy:
        """All-zero logits on every reachable context."""
        keys = reachable_contexts(vocab, prompt_dist, capacity, order)
        zeros = np.zeros(vocab.n_actions)
        return cls(vocab, capacity, order, {key: zeros for key in keys})

    @cached_property
    def keys(self) -> tuple[ContextKey, ...]:
        """Context keys in sorted order, which is also the parameter order."""
        return tuple(self.logits)

    @cached_property
    def key_index(self) -> dict[ContextKey, int]:
        return {key: i for i, key in enumerate(self.keys)}

    @property
    def n_params(self) -> int:
        return len(self.keys) * self.vocab.n_actions

    def context_of(self, state: State) -> ContextKey:
        return project_context(self.context_order, state)

    def matrix(self) -> np.ndarray:
        """Logits as a read-only (contexts, actions) array."""
        return self._matrix

    def to_vector(self) -> np.ndarray:
        return self.matrix().ravel()

    def with_matrix(self, matrix: np.ndarray) -> TabularPolicy:
        rows = np.asarray(matrix, dtype=np.float64).reshape(len(self.keys), self.vocab.n_actions)
        return TabularPolicy(
            self.vocab,
            self.capacity,
            self.context_order,
            {key: rows[i] for i, key in enumerate(self.keys)},
        )

    def with_vector(self, vector: np.ndarray) -> TabularPolicy:
        """Copy with logits replaced by a flat vector in ``keys`` order."""
        vec = np.asarray(vector, dtype=np.float64)
        if vec.shape != (self.n_params,):
            raise DomainError(
                f"Parameter vector has shape {vec.shape}, expected ({self.n_params},)"
            )
        return self.with_matrix(vec)

    def with_contexts(self, keys: Iterable[ContextKey]) -> TabularPolicy:
        """Copy with zero logits added for any key not yet present."""
        missing = [key for key in keys if key not in self.logits]
        if not missing:
            return self
        logger.debug("Instantiating %d missing contexts with zero logits", len(missing))
        logits = dict(self.logits)
        zeros = np.zeros(self.vocab.n_actions)
        for key in missing:
            logits[key] = zeros
        return TabularPolicy(self.vocab, self.capacity, self.context_order, logits)

    def row(self, key: ContextKey) -> np.ndarray:
        try:
            return self.logits[key]
        except KeyError:
            raise ContextKeyError(str(key)) from None

    def probs_at(self, key: ContextKey) -> np.ndarray:
        return softmax(self.row(key))

    def log_probs_at(self, key: ContextKey) -> np.ndarray:
        return log_softmax(self.row(key))


def action_distribution(policy: TabularPolicy, state: State) -> np.ndarray:
    """Softmax action probabilities at a non-terminal state.

    Entry i is the probability of ``policy.vocab.action_ids[i]``; the mask
    token has no entry.

    Raises:
        DomainError: If the state is terminal.
        ContextKeyError: If the state's context has no logit row.
    """
    if is_terminal(state):
        raise DomainError("No action distribution at a terminal state")
    return policy.probs_at(policy.context_of(state))


def logprob_trajectory(policy: TabularPolicy, traj: Trajectory) -> float:
    """Sum of per-step log-probabilities of a trajectory.

    Raises:
        DomainError: If the trajectory is malformed for the policy's vocab and capacity.
        ContextKeyError: If a visited context is missing.
    """
    vocab = policy.vocab
    check_trajectory(vocab, traj, policy.capacity)
    total = 0.0
    for state, action in traj.states(vocab, policy.capacity):
        total += float(policy.log_probs_at(policy.context_of(state))[vocab.action_index(action)])
    return total


class _AncestralSampler:
    """Draws responses by inverse-CDF sampling with cached per-context CDFs."""

    def __init__(self, policy: TabularPolicy, rng: np.random.Generator) -> None:
        self.policy = policy
        self.rng = rng
        self._cdf: dict[ContextKey, np.ndarray] = {}

    def _cdf_at(self, key: ContextKey) -> np.ndarray:
        cdf = self._cdf.get(key)
        if cdf is None:
            cdf = np.cumsum(self.policy.probs_at(key))
            cdf[-1] = 1.0
            self._cdf[key] = cdf
        return cdf

    def draw(self, prompt: TokenSeq) -> Trajectory:
        policy = self.policy
        actions = policy.vocab.action_ids
        state = initial_state(policy.vocab, prompt, policy.capacity)
        while not is_terminal(state):
            cdf = self._cdf_at(policy.context_of(state))
            idx = int(np.searchsorted(cdf, self.rng.random(), side="right"))
            state = concat_transition(state, actions[min(idx, len(actions) - 1)])
        return Trajectory(state.prompt, state.generated)


def sample_response(
    policy: TabularPolicy,
    prompt: TokenSeq,
    rng_seed: int | np.random.Generator,
) -> Trajectory:
    """Ancestral sampling of one response; the same seed gives the same response."""
    return _AncestralSampler(policy, np.random.default_rng(rng_seed)).draw(tuple(prompt))


def sample_dataset(
    policy: TabularPolicy,
    prompt_dist: PromptDist,
    n: int,
    rng_seed: int | np.random.Generator,
) -> list[Trajectory]:
    """Draw ``n`` (prompt, response) demonstrations.

    Prompts are drawn from ``prompt_dist`` and responses by ancestral
    sampling, all from one seeded generator.
    """
    if n < 1:
        raise DomainError(f"Dataset size must be >= 1, got {n}")
    rng = np.random.default_rng(rng_seed)
    sampler = _AncestralSampler(policy, rng)
    prompt_ids = rng.choice(len(prompt_dist.prompts), size=n, p=np.asarray(prompt_dist.probs))
    return [sampler.draw(prompt_dist.prompts[int(i)]) for i in prompt_ids]


@dataclass(frozen=True)
class ExpertSpec:
    """Hidden terminal reward and Boltzmann temperature of the expert."""

    hidden_reward: TerminalReward
    temperature: float = 1.0

    def __post_init__(self) -> None:
        if not (self.temperature > 0 and math.isfinite(self.temperature)):
            raise DomainError(f"Temperature must be positive and finite, got {self.temperature}")


def boltzmann_expert(
    spec: ExpertSpec,
    vocab: Vocab,
    prompt_dist: PromptDist,
    capacity: int,
) -> TabularPolicy:
    """Build the FULL-context policy with d(y|x) proportional to exp(r(x, y)/tau).

    Backward induction over each prompt's tree: a leaf's log partition value
    is r/tau, an inner node's is the logsumexp of its children, and the
    logits at a node are its children's values shifted by their max.

    Raises:
        EnumerationBudgetError: If the trees exceed the enumeration budget.
        ContextKeyError: If the hidden reward misses an enumerable trajectory.
    """
    check_budget(vocab, capacity, n_prompts=len(prompt_dist.prompts))
    tau = spec.temperature
    eos = vocab.eos_id
    logits: dict[ContextKey, np.ndarray] = {}

    for prompt in prompt_dist.prompts:

        def log_partition(generated: TokenSeq, prompt: TokenSeq = prompt) -> float:
            values = np.empty(vocab.n_actions)
            for i, action in enumerate(vocab.action_ids):
                child = generated + (action,)
                if action == eos or len(child) == capacity:
                    values[i] = terminal_reward(spec.hidden_reward, Trajectory(prompt, child)) / tau
                else:
                    values[i] = log_partition(child)
            key = ContextKey(prompt + generated, True, len(prompt))
            logits[key] = values - values.max()
            return float(logsumexp(values))

        log_z = log_partition(())
        logger.debug("Expert log-partition for prompt %s: %.6f", format_seq(prompt), log_z)

    return TabularPolicy(vocab, capacity, FULL, logits)
