"""The deterministic token-generation MDP.

States are (prompt, generated-prefix) pairs, actions are vocabulary tokens,
the transition appends the chosen token, and any state containing EOS (or
whose generated part reached capacity) is absorbing. Rewards are paid only
at terminal states.

Sequences are stored as variable-length tuples of token ids; the MASK token
is a padding marker that never appears inside a state and is never a legal
action.
"""

from __future__ import annotations

import hashlib
import math
from collections.abc import Iterable, Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from functools import cached_property
from typing import TypeAlias

from align_lab.config import get_settings
from align_lab.core.exceptions import ContextKeyError, DomainError, EnumerationBudgetError

TokenSeq: TypeAlias = tuple[int, ...]
TrajKey: TypeAlias = tuple[TokenSeq, TokenSeq]

DEFAULT_EOS = "<eos>"
DEFAULT_MASK = "<mask>"
SYMBOL_SEPARATOR = "|"


@dataclass(frozen=True)
class Vocab:
    """An ordered token vocabulary with designated EOS and MASK tokens."""

    tokens: tuple[str, ...]
    eos_id: int
    mask_id: int

    def __post_init__(self) -> None:
        size = len(self.tokens)
        if len(set(self.tokens)) != size:
            raise DomainError("Token symbols must be unique", {"tokens": list(self.tokens)})
        for name, idx in (("eos_id", self.eos_id), ("mask_id", self.mask_id)):
            if not 0 <= idx < size:
                raise DomainError(f"{name}={idx} out of range for vocabulary of size {size}")
        if self.eos_id == self.mask_id:
            raise DomainError("eos_id and mask_id must differ")
        if any(SYMBOL_SEPARATOR in t for t in self.tokens):
            raise DomainError(f"Token symbols may not contain {SYMBOL_SEPARATOR!r}")

    @classmethod
    def build(
        cls,
        symbols: Sequence[str],
        eos: str = DEFAULT_EOS,
        mask: str = DEFAULT_MASK,
    ) -> Vocab:
        """Build a vocabulary from content symbols, appending EOS then MASK.

        Args:
            symbols: Content token symbols, in id order.
            eos: Symbol of the end-of-sequence token.
            mask: Symbol of the padding token.

        Returns:
            The vocabulary.
        """
        tokens = (*symbols, eos, mask)
        return cls(tokens=tokens, eos_id=len(symbols), mask_id=len(symbols) + 1)

    @property
    def size(self) -> int:
        return len(self.tokens)

    @cached_property
    def action_ids(self) -> TokenSeq:
        """Legal action token ids in increasing order (mask excluded)."""
        return tuple(i for i in range(self.size) if i != self.mask_id)

    @property
    def n_actions(self) -> int:
        return self.size - 1

    @cached_property
    def _action_index(self) -> dict[int, int]:
        return {tok: i for i, tok in enumerate(self.action_ids)}

    def action_index(self, token_id: int) -> int:
        """Position of a token id inside a logit vector.

        Raises:
            DomainError: If the id is not a legal action.
        """
        self.check_action(token_id)
        return self._action_index[token_id]

    def check_token(self, token_id: int) -> None:
        """Raise DomainError unless token_id is a valid vocabulary index."""
        if not isinstance(token_id, int) or not 0 <= token_id < self.size:
            raise DomainError(f"Invalid token id: {token_id!r}", {"vocab_size": self.size})

    def check_action(self, token_id: int) -> None:
        """Raise DomainError unless token_id is a legal action."""
        self.check_token(token_id)
        if token_id == self.mask_id:
            raise DomainError("The mask token is never a legal action")

    def id_of(self, symbol: str) -> int:
        try:
            return self.tokens.index(symbol)
        except ValueError:
            raise DomainError(f"Unknown token symbol: {symbol!r}") from None

    def encode(self, text: str) -> TokenSeq:
        """Encode a ``|``-separated symbol string; the empty string is the empty sequence."""
        if not text.strip():
            return ()
        return tuple(self.id_of(s.strip()) for s in text.split(SYMBOL_SEPARATOR))

    def decode(self, seq: Iterable[int]) -> str:
        return SYMBOL_SEPARATOR.join(self.tokens[i] for i in seq)

    def digest(self) -> str:
        """Short stable hash of the vocabulary used in serialized headers."""
        payload = "\x1f".join(self.tokens) + f"\x1e{self.eos_id}\x1e{self.mask_id}"
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _check_sequence(vocab: Vocab, seq: TokenSeq, what: str) -> None:
    for tok in seq:
        vocab.check_token(tok)
        if tok == vocab.mask_id:
            raise DomainError(f"The mask token may not appear in the {what}")


@dataclass(frozen=True)
class State:
    """A state (x, y^(0:k-1)): the prompt plus the generated response prefix."""

    prompt: TokenSeq
    generated: TokenSeq
    capacity: int
    vocab: Vocab = field(repr=False)

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise DomainError(f"Capacity must be >= 1, got {self.capacity}")
        if len(self.generated) > self.capacity:
            raise DomainError(
                f"Generated length {len(self.generated)} exceeds capacity {self.capacity}"
            )
        _check_sequence(self.vocab, self.prompt, "prompt")
        _check_sequence(self.vocab, self.generated, "generated prefix")
        eos = self.vocab.eos_id
        if eos in self.generated[:-1]:
            raise DomainError("No token may follow EOS in a generated prefix")

    @property
    def prefix(self) -> TokenSeq:
        """prompt followed by generated."""
        return self.prompt + self.generated

    @property
    def key(self) -> TrajKey:
        return (self.prompt, self.generated)


def initial_state(vocab: Vocab, prompt: TokenSeq, capacity: int) -> State:
    """The state before any token has been generated."""
    return State(prompt=tuple(prompt), generated=(), capacity=capacity, vocab=vocab)


@dataclass(frozen=True)
class Trajectory:
    """A complete response to a prompt, ending in EOS or truncated at capacity."""

    prompt: TokenSeq
    response: TokenSeq

    @property
    def key(self) -> TrajKey:
        return (self.prompt, self.response)

    def states(self, vocab: Vocab, capacity: int) -> Iterator[tuple[State, int]]:
        """Yield the (state, action) pairs visited while generating this response."""
        for k, action in enumerate(self.response):
            yield State(self.prompt, self.response[:k], capacity, vocab), action


def check_trajectory(vocab: Vocab, traj: Trajectory, capacity: int) -> None:
    """Validate a trajectory against a vocabulary and capacity.

    Raises:
        DomainError: If the response is empty, too long, contains MASK, has an
            EOS before its final position, or stops early without EOS.
    """
    response = traj.response
    if not 1 <= len(response) <= capacity:
        raise DomainError(
            f"Response length {len(response)} outside [1, {capacity}]",
            {"response": list(response)},
        )
    _check_sequence(vocab, traj.prompt, "prompt")
    _check_sequence(vocab, response, "response")
    eos = vocab.eos_id
    if eos in response[:-1]:
        raise DomainError("EOS may only appear at the final position of a response")
    if response[-1] != eos and len(response) != capacity:
        raise DomainError("A response without EOS must reach capacity")


@dataclass(frozen=True)
class PromptDist:
    """Initial-state distribution p(x) over prompts."""

    prompts: tuple[TokenSeq, ...]
    probs: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.prompts or len(self.prompts) != len(self.probs):
            raise DomainError("PromptDist needs one probability per prompt")
        if len(set(self.prompts)) != len(self.prompts):
            raise DomainError("Prompts must be distinct")
        if any(p < 0 for p in self.probs):
            raise DomainError("Prompt probabilities must be non-negative")
        if abs(math.fsum(self.probs) - 1.0) > 1e-12:
            raise DomainError(f"Prompt probabilities sum to {math.fsum(self.probs)}, not 1")

    @classmethod
    def single(cls, prompt: TokenSeq = ()) -> PromptDist:
        return cls(prompts=(tuple(prompt),), probs=(1.0,))

    @classmethod
    def uniform(cls, prompts: Sequence[TokenSeq]) -> PromptDist:
        n = len(prompts)
        probs = [1.0 / n] * n
        # absorb rounding so the sum is exactly representable as 1
        probs[-1] = 1.0 - math.fsum(probs[:-1])
        return cls(prompts=tuple(tuple(p) for p in prompts), probs=tuple(probs))

    def prob_of(self, prompt: TokenSeq) -> float:
        try:
            return self.probs[self.prompts.index(prompt)]
        except ValueError:
            raise ContextKeyError(prompt, where="prompt distribution") from None

    def items(self) -> Iterator[tuple[TokenSeq, float]]:
        return zip(self.prompts, self.probs, strict=True)


def concat_transition(state: State, action: int) -> State:
    """Apply Concat(s, a) = [s, a], with terminal states absorbing.

    Args:
        state: The current state.
        action: The chosen token id.

    Returns:
        The next state; the same state if ``state`` is terminal.

    Raises:
        DomainError: If the action is not a valid token or is the mask token.
    """
    state.vocab.check_action(action)
    if is_terminal(state):
        return state
    return State(state.prompt, state.generated + (action,), state.capacity, state.vocab)


def is_terminal(state: State) -> bool:
    """True iff the generated prefix contains EOS or has reached capacity."""
    gen = state.generated
    return len(gen) >= state.capacity or (bool(gen) and gen[-1] == state.vocab.eos_id)


def count_trajectories(vocab: Vocab, capacity: int) -> int:
    """Number of complete responses reachable from one prompt.

    EOS-terminated responses of every length 1..C plus the truncated length-C
    responses: sum_{k=1..C} m^(k-1) + m^C with m = (non-mask tokens) - 1.
    """
    m = vocab.n_actions - 1
    return sum(m ** (k - 1) for k in range(1, capacity + 1)) + m**capacity


def check_budget(vocab: Vocab, capacity: int, n_prompts: int = 1, budget: int | None = None) -> int:
    """Return the enumeration size or raise EnumerationBudgetError."""
    limit = budget if budget is not None else get_settings().numerics.enumeration_budget
    count = count_trajectories(vocab, capacity) * n_prompts
    if count > limit:
        raise EnumerationBudgetError(count, limit)
    return count


def enumerate_trajectories(
    vocab: Vocab,
    prompt: TokenSeq,
    capacity: int,
    budget: int | None = None,
) -> list[Trajectory]:
    """Enumerate every trajectory reachable from a prompt.

    The order is depth-first and lexicographic by token id, which makes
    table keys reproducible.

    Raises:
        DomainError: If capacity < 1 or the vocabulary has no actions.
        EnumerationBudgetError: If the tree is larger than the budget.
    """
    if capacity < 1:
        raise DomainError(f"Capacity must be >= 1, got {capacity}")
    if vocab.n_actions < 1:
        raise DomainError("Vocabulary has no legal actions")
    check_budget(vocab, capacity, budget=budget)
    _check_sequence(vocab, tuple(prompt), "prompt")

    prompt = tuple(prompt)
    eos = vocab.eos_id
    out: list[Trajectory] = []

    def walk(prefix: TokenSeq) -> None:
        for action in vocab.action_ids:
            response = prefix + (action,)
            if action == eos or len(response) == capacity:
                out.append(Trajectory(prompt, response))
            else:
                walk(response)

    walk(())
    return out


def enumerate_states(vocab: Vocab, prompt: TokenSeq, capacity: int) -> list[State]:
    """Every reachable non-terminal state of a prompt's tree, depth-first."""
    check_budget(vocab, capacity)
    prompt = tuple(prompt)
    eos = vocab.eos_id
    out: list[State] = []

    def walk(prefix: TokenSeq) -> None:
        out.append(State(prompt, prefix, capacity, vocab))
        if len(prefix) + 1 >= capacity:
            return
        for action in vocab.action_ids:
            if action != eos:
                walk(prefix + (action,))

    walk(())
    return out


@dataclass(frozen=True)
class TerminalReward:
    """Terminal-only reward table r(x, y) keyed by complete trajectories."""

    table: Mapping[TrajKey, float]

    def __post_init__(self) -> None:
        for key, value in self.table.items():
            if not math.isfinite(value):
                raise DomainError(f"Non-finite reward for {key}: {value}")

    @classmethod
    def build(
        cls,
        vocab: Vocab,
        prompt_dist: PromptDist,
        capacity: int,
        rewards: Mapping[TrajKey, float],
        default: float = 0.0,
    ) -> TerminalReward:
        """Fill a reward table over every enumerable trajectory.

        Args:
            vocab: The vocabulary.
            prompt_dist: Prompts to enumerate.
            capacity: Maximum generated length.
            rewards: Explicit rewards; keys must be enumerable trajectories.
            default: Reward of every trajectory not listed.

        Raises:
            DomainError: If an explicit key is not an enumerable trajectory.
        """
        table: dict[TrajKey, float] = {}
        for prompt in prompt_dist.prompts:
            for traj in enumerate_trajectories(vocab, prompt, capacity):
                table[traj.key] = float(rewards.get(traj.key, default))
        unknown = set(rewards) - set(table)
        if unknown:
            raise DomainError(
                "Reward keys are not enumerable trajectories",
                {"keys": sorted(str(k) for k in unknown)},
            )
        return cls(table=table)

    @classmethod
    def indicator(
        cls,
        vocab: Vocab,
        prompt_dist: PromptDist,
        capacity: int,
        targets: Iterable[TrajKey],
    ) -> TerminalReward:
        """Reward 1 on the target trajectories and 0 elsewhere."""
        return cls.build(vocab, prompt_dist, capacity, {key: 1.0 for key in targets})


def terminal_reward(reward: TerminalReward, traj: Trajectory) -> float:
    """Look up r(s_K) for a complete trajectory.

    Raises:
        ContextKeyError: If the trajectory is not in the table.
    """
    try:
        return reward.table[traj.key]
    except KeyError:
        raise ContextKeyError(traj.key, where="reward table") from None


def format_seq(seq: Iterable[int]) -> str:
    """Canonical token-id string, e.g. ``0.1.2``."""
    return ".".join(str(t) for t in seq)


def parse_seq(text: str) -> TokenSeq:
    return tuple(int(t) for t in text.split(".")) if text else ()


def format_traj_key(key: TrajKey) -> str:
    """Canonical ``prompt|response`` token-id string of a trajectory key."""
    return f"{format_seq(key[0])}|{format_seq(key[1])}"


def parse_traj_key(text: str) -> TrajKey:
    prompt, _, response = text.partition("|")
    return parse_seq(prompt), parse_seq(response)
