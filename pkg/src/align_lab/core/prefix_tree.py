"""Compiled prefix trees for exact evaluation.

A tree lays out every reachable (prompt, non-terminal state, action) node in
depth-first order, state-major: the node of state ``s`` and action index
``a`` is ``s * n_actions + a``. Evaluating a policy on the tree yields
per-node log-probabilities and occupancy masses as flat arrays, and
``path_score_gradient`` turns any per-node weighting of path scores into a
gradient on the policy's logit matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import TypeAlias

import numpy as np
from scipy.special import log_softmax

from align_lab.core.exceptions import ContextKeyError
from align_lab.core.policy import ContextKey, ContextOrder, TabularPolicy, project_context
from align_lab.core.token_mdp import (
    PromptDist,
    State,
    TokenSeq,
    TrajKey,
    Vocab,
    check_budget,
    enumerate_states,
    format_seq,
    parse_seq,
)

SAKey: TypeAlias = tuple[TokenSeq, TokenSeq, int]


def format_sa_key(key: SAKey) -> str:
    """Canonical ``prompt|generated>action`` token-id string."""
    prompt, generated, action = key
    return f"{format_seq(prompt)}|{format_seq(generated)}>{action}"


def parse_sa_key(text: str) -> SAKey:
    state, _, action = text.rpartition(">")
    prompt, _, generated = state.partition("|")
    return parse_seq(prompt), parse_seq(generated), int(action)


@dataclass(frozen=True, eq=False)
class PrefixTree:
    """Flat-array layout of every prompt's generation tree."""

    vocab: Vocab
    capacity: int
    prompt_dist: PromptDist
    states: tuple[State, ...]
    state_prompt: np.ndarray
    state_parent: np.ndarray
    state_depth: np.ndarray

    @property
    def n_actions(self) -> int:
        return self.vocab.n_actions

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_nodes(self) -> int:
        return self.n_states * self.n_actions

    @cached_property
    def node_depth(self) -> np.ndarray:
        return np.repeat(self.state_depth, self.n_actions)

    @cached_property
    def node_parent(self) -> np.ndarray:
        """Node leading into each node's state, -1 at the root of a prompt."""
        return np.repeat(self.state_parent, self.n_actions)

    @cached_property
    def node_prompt(self) -> np.ndarray:
        return np.repeat(self.state_prompt, self.n_actions)

    @cached_property
    def node_leaf(self) -> np.ndarray:
        """True where the node's action ends the trajectory."""
        eos_idx = self.vocab.action_index(self.vocab.eos_id)
        action_idx = np.tile(np.arange(self.n_actions), self.n_states)
        return (action_idx == eos_idx) | (self.node_depth + 1 >= self.capacity)

    @cached_property
    def leaf_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.node_leaf)

    @cached_property
    def levels(self) -> tuple[np.ndarray, ...]:
        depth = self.node_depth
        return tuple(np.flatnonzero(depth == k) for k in range(int(depth.max()) + 1))

    @cached_property
    def prompt_mass(self) -> np.ndarray:
        """p(x) of each node's prompt."""
        return np.asarray(self.prompt_dist.probs)[self.node_prompt]

    @cached_property
    def sa_keys(self) -> tuple[SAKey, ...]:
        """(prompt, generated, action token) key of every node."""
        actions = self.vocab.action_ids
        return tuple((s.prompt, s.generated, a) for s in self.states for a in actions)

    @cached_property
    def traj_keys(self) -> tuple[TrajKey, ...]:
        """(prompt, response) key of every leaf node, in leaf order."""
        keys = self.sa_keys
        return tuple((keys[i][0], keys[i][1] + (keys[i][2],)) for i in self.leaf_nodes)

    @cached_property
    def sa_index(self) -> dict[SAKey, int]:
        return {key: i for i, key in enumerate(self.sa_keys)}

    @cached_property
    def traj_index(self) -> dict[TrajKey, int]:
        return {key: i for i, key in enumerate(self.traj_keys)}

    def contexts(self, order: ContextOrder) -> list[ContextKey]:
        cache = self._context_cache
        if order not in cache:
            cache[order] = [project_context(order, s) for s in self.states]
        return cache[order]

    @cached_property
    def _context_cache(self) -> dict[ContextOrder, list[ContextKey]]:
        return {}

    def context_rows(self, policy: TabularPolicy) -> np.ndarray:
        """Row of the policy's logit matrix used at each state.

        Raises:
            ContextKeyError: If a reachable state's context is missing.
        """
        index = policy.key_index
        try:
            return np.fromiter(
                (index[key] for key in self.contexts(policy.context_order)),
                dtype=np.intp,
                count=self.n_states,
            )
        except KeyError as exc:
            raise ContextKeyError(str(exc.args[0])) from None

    def evaluate(self, policy: TabularPolicy, gamma: float = 1.0) -> TreeEval:
        """Per-node log-probabilities and occupancy masses of a policy."""
        rows = self.context_rows(policy)
        log_pi = log_softmax(policy.matrix()[rows], axis=1)
        node_logp = log_pi.ravel()
        cum = np.empty_like(node_logp)
        parent = self.node_parent
        for level in self.levels:
            par = parent[level]
            base = np.where(par >= 0, cum[np.maximum(par, 0)], 0.0)
            cum[level] = base + node_logp[level]
        rho = self.prompt_mass * gamma ** self.node_depth * np.exp(cum)
        return TreeEval(self, rows, log_pi, cum, rho, gamma)

    def subtree_sums(self, weights: np.ndarray) -> np.ndarray:
        """Sum of ``weights`` over each node and all of its descendants."""
        total = np.array(weights, dtype=np.float64)
        parent = self.node_parent
        for level in reversed(self.levels[1:]):
            np.add.at(total, parent[level], total[level])
        return total


@dataclass(frozen=True, eq=False)
class TreeEval:
    """A policy evaluated on a prefix tree."""

    tree: PrefixTree
    rows: np.ndarray
    log_pi: np.ndarray
    cum_logp: np.ndarray
    rho: np.ndarray
    gamma: float

    @cached_property
    def pi(self) -> np.ndarray:
        """(states, actions) action probabilities."""
        return np.exp(self.log_pi)

    @property
    def node_logp(self) -> np.ndarray:
        return self.log_pi.ravel()

    @cached_property
    def traj_logp(self) -> np.ndarray:
        """log d(y|x) of every leaf, in leaf order."""
        return self.cum_logp[self.tree.leaf_nodes]

    @cached_property
    def traj_prob(self) -> np.ndarray:
        return np.exp(self.traj_logp)

    @cached_property
    def traj_joint(self) -> np.ndarray:
        """p(x) d(y|x) of every leaf."""
        return self.tree.prompt_mass[self.tree.leaf_nodes] * self.traj_prob

    def path_score_gradient(self, weights: np.ndarray, n_contexts: int) -> np.ndarray:
        """Gradient of sum_n w_n * log P(path to n) on the logit matrix.

        Each node's path log-probability is the sum of log pi along the
        path, so the weight reaching a node is its subtree sum ``U``. The
        derivative of log pi(a|s) in the logits of s is e_a - pi(.|s).

        Args:
            weights: One weight per node.
            n_contexts: Number of rows of the policy's logit matrix.

        Returns:
            A (contexts, actions) gradient array.
        """
        tree = self.tree
        flow = tree.subtree_sums(weights).reshape(tree.n_states, tree.n_actions)
        per_state = flow - flow.sum(axis=1, keepdims=True) * self.pi
        grad = np.zeros((n_contexts, tree.n_actions))
        np.add.at(grad, self.rows, per_state)
        return grad

    def leaf_weights(self, leaf_values: np.ndarray) -> np.ndarray:
        """Scatter one value per leaf into a full per-node weight array."""
        weights = np.zeros(self.tree.n_nodes)
        weights[self.tree.leaf_nodes] = leaf_values
        return weights


def build_prefix_tree(vocab: Vocab, prompt_dist: PromptDist, capacity: int) -> PrefixTree:
    """Compile the generation trees of every prompt.

    Compiled trees are cached; the budget is checked on every call.

    Raises:
        EnumerationBudgetError: If the trees exceed the enumeration budget.
    """
    check_budget(vocab, capacity, n_prompts=len(prompt_dist.prompts))
    return _compile_prefix_tree(vocab, prompt_dist, capacity)


@lru_cache(maxsize=32)
def _compile_prefix_tree(vocab: Vocab, prompt_dist: PromptDist, capacity: int) -> PrefixTree:
    states: list[State] = []
    prompt_ids: list[int] = []
    parents: list[int] = []
    index: dict[tuple[TokenSeq, TokenSeq], int] = {}
    n_actions = vocab.n_actions

    for p_idx, prompt in enumerate(prompt_dist.prompts):
        for state in enumerate_states(vocab, prompt, capacity):
            gen = state.generated
            if gen:
                parent_state = index[(prompt, gen[:-1])]
                parents.append(parent_state * n_actions + vocab.action_index(gen[-1]))
            else:
                parents.append(-1)
            index[(prompt, gen)] = len(states)
            states.append(state)
            prompt_ids.append(p_idx)

    return PrefixTree(
        vocab=vocab,
        capacity=capacity,
        prompt_dist=prompt_dist,
        states=tuple(states),
        state_prompt=np.asarray(prompt_ids, dtype=np.intp),
        state_parent=np.asarray(parents, dtype=np.intp),
        state_depth=np.asarray([len(s.generated) for s in states], dtype=np.intp),
    )


def tree_for(policy: TabularPolicy, prompt_dist: PromptDist) -> PrefixTree:
    return build_prefix_tree(policy.vocab, prompt_dist, policy.capacity)
