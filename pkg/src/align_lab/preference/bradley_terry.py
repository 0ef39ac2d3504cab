"""Bradley-Terry reward models with per-response performance variance.

A response's performance on one comparison is modelled as its score plus
noise of scale V. The winner of a comparison is the response with the
higher performance, which gives

    P(A > B) = 1/2 + 1/2 erf((S_A - S_B) / sqrt(2 (var_A + var_B)))      (Gaussian)
    P(A > B) = 1/2 + 1/2 tanh((r_A - r_B) / sqrt(2 (v2_A + v2_B)))        (logistic)

The logistic form equals sigmoid((r_A - r_B) / sqrt((v2_A + v2_B) / 2)),
which is the margin the cross-entropy losses below are written in.
"""

from __future__ import annotations

import logging
from collections.abc import Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np
from scipy.special import erf, expit

from align_lab.config import get_settings
from align_lab.core.exceptions import ContextKeyError, DomainError
from align_lab.objectives.report import LossReport

logger = logging.getLogger("align_lab.preference")

PrefKey = tuple[str, str]
"""(prompt, response) label pair."""

PrefTriple = tuple[str, str, str]
"""(prompt, preferred response, dispreferred response)."""

PairSpec = tuple[str, str, str]
"""(prompt, response A, response B) to be compared."""

_LOW = float(np.nextafter(0.0, 1.0))
_HIGH = float(np.nextafter(1.0, 0.0))


class WinLink(str, Enum):
    """Functional form used to turn score gaps into win probabilities."""

    TANH = "tanh"
    ERF = "erf"


def _check_variances(*variances: np.ndarray) -> None:
    for var in variances:
        if np.any(~(var > 0)):
            raise DomainError("Performance variances must be positive")


def _as_probability(p: np.ndarray) -> np.ndarray | float:
    p = np.clip(p, _LOW, _HIGH)
    return float(p) if p.ndim == 0 else p


def bt_win_prob_gauss(
    s_a: float | np.ndarray,
    s_b: float | np.ndarray,
    var_a: float | np.ndarray,
    var_b: float | np.ndarray,
) -> float | np.ndarray:
    """P(A beats B) when performances are Gaussian with the given variances.

    Raises:
        DomainError: If a variance is not positive.
    """
    va, vb = np.asarray(var_a, dtype=np.float64), np.asarray(var_b, dtype=np.float64)
    _check_variances(va, vb)
    gap = np.asarray(s_a, dtype=np.float64) - np.asarray(s_b, dtype=np.float64)
    return _as_probability(0.5 + 0.5 * erf(gap / np.sqrt(2.0 * (va + vb))))


def bt_win_prob_tanh(
    r_a: float | np.ndarray,
    r_b: float | np.ndarray,
    v2_a: float | np.ndarray,
    v2_b: float | np.ndarray,
) -> float | np.ndarray:
    """P(A beats B) under logistic performance noise.

    Computed as sigmoid(2z), the same quantity as 1/2 + 1/2 tanh(z).

    Raises:
        DomainError: If a variance is not positive.
    """
    va, vb = np.asarray(v2_a, dtype=np.float64), np.asarray(v2_b, dtype=np.float64)
    _check_variances(va, vb)
    gap = np.asarray(r_a, dtype=np.float64) - np.asarray(r_b, dtype=np.float64)
    return _as_probability(expit(2.0 * gap / np.sqrt(2.0 * (va + vb))))


def win_probability(
    link: WinLink,
    r_a: float | np.ndarray,
    r_b: float | np.ndarray,
    v2_a: float | np.ndarray,
    v2_b: float | np.ndarray,
) -> float | np.ndarray:
    if WinLink(link) is WinLink.ERF:
        return bt_win_prob_gauss(r_a, r_b, v2_a, v2_b)
    return bt_win_prob_tanh(r_a, r_b, v2_a, v2_b)


@dataclass(frozen=True)
class BTGroundTruth:
    """Hidden scores and performance variances per (prompt, response)."""

    scores: Mapping[PrefKey, float]
    variances: Mapping[PrefKey, float]
    domains: Mapping[PrefKey, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if set(self.scores) != set(self.variances):
            raise DomainError("Score and variance tables must share their keys")
        bad = [k for k, v in self.variances.items() if not v > 0]
        if bad:
            raise DomainError(f"Non-positive variance for {bad[0]}", {"key": str(bad[0])})

    @classmethod
    def homoscedastic(
        cls, prompt: str, scores: Mapping[str, float], variance: float = 1.0
    ) -> BTGroundTruth:
        return cls(
            {(prompt, y): float(r) for y, r in scores.items()},
            {(prompt, y): variance for y in scores},
        )

    @property
    def keys(self) -> tuple[PrefKey, ...]:
        return tuple(sorted(self.scores))

    def lookup(self, key: PrefKey) -> tuple[float, float]:
        if key not in self.scores:
            raise ContextKeyError(key, where="ground-truth")
        return self.scores[key], self.variances[key]

    def all_pairs(self, prompt: str | None = None) -> list[PairSpec]:
        """Every unordered pair of responses sharing a prompt, in sorted order."""
        pairs: list[PairSpec] = []
        keys = [k for k in self.keys if prompt is None or k[0] == prompt]
        for i, (x, a) in enumerate(keys):
            pairs.extend((x, a, b) for (x2, b) in keys[i + 1 :] if x2 == x)
        return pairs


@dataclass(frozen=True, eq=False)
class PrefDataset:
    """Preference triples stored as indices into a sorted key table."""

    keys: tuple[PrefKey, ...]
    plus: np.ndarray
    minus: np.ndarray

    def __post_init__(self) -> None:
        plus = np.asarray(self.plus, dtype=np.int64)
        minus = np.asarray(self.minus, dtype=np.int64)
        if plus.shape != minus.shape or plus.ndim != 1:
            raise DomainError("plus/minus index arrays must be 1-d and of equal length")
        if np.any(plus == minus):
            raise DomainError("A triple compares a response with itself")
        prompts = np.array([k[0] for k in self.keys], dtype=object)
        if plus.size and np.any(prompts[plus] != prompts[minus]):
            raise DomainError("A triple compares responses to different prompts")
        plus.setflags(write=False)
        minus.setflags(write=False)
        object.__setattr__(self, "plus", plus)
        object.__setattr__(self, "minus", minus)

    @classmethod
    def from_triples(cls, triples: Sequence[PrefTriple]) -> PrefDataset:
        keys = tuple(sorted({(x, y) for x, yp, ym in triples for y in (yp, ym)}))
        index = {k: i for i, k in enumerate(keys)}
        plus = np.fromiter((index[(x, yp)] for x, yp, _ in triples), np.int64, len(triples))
        minus = np.fromiter((index[(x, ym)] for x, _, ym in triples), np.int64, len(triples))
        return cls(keys, plus, minus)

    def __len__(self) -> int:
        return int(self.plus.size)

    @property
    def triples(self) -> Iterator[PrefTriple]:
        for i, j in zip(self.plus.tolist(), self.minus.tolist(), strict=True):
            yield self.keys[i][0], self.keys[i][1], self.keys[j][1]

    def subset(self, rows: np.ndarray) -> PrefDataset:
        return PrefDataset(self.keys, self.plus[rows], self.minus[rows])

    @cached_property
    def pair_counts(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Unique (plus, minus) index pairs with their multiplicities."""
        if not len(self):
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty, empty
        stacked = np.stack([self.plus, self.minus], axis=1)
        unique, counts = np.unique(stacked, axis=0, return_counts=True)
        return unique[:, 0], unique[:, 1], counts

    def win_rate(self, prompt: str, a: str, b: str) -> float:
        """Share of the a-vs-b comparisons that a won."""
        index = {k: i for i, k in enumerate(self.keys)}
        ia, ib = index[(prompt, a)], index[(prompt, b)]
        wins = int(np.count_nonzero((self.plus == ia) & (self.minus == ib)))
        losses = int(np.count_nonzero((self.plus == ib) & (self.minus == ia)))
        if wins + losses == 0:
            raise DomainError(f"No comparisons between {a} and {b}")
        return wins / (wins + losses)


@dataclass(frozen=True, eq=False)
class BTRewardModel:
    """Tabular reward R and performance scale V per (prompt, response).

    The simplified model fixes V to 1 everywhere.
    """

    keys: tuple[PrefKey, ...]
    rewards: np.ndarray
    scales: np.ndarray
    simplified: bool = False

    def __post_init__(self) -> None:
        rewards = np.asarray(self.rewards, dtype=np.float64)
        scales = (
            np.ones(len(self.keys)) if self.simplified else np.asarray(self.scales, np.float64)
        )
        if rewards.shape != (len(self.keys),) or scales.shape != (len(self.keys),):
            raise DomainError("Reward and scale tables must align with the keys")
        floor = get_settings().numerics.v_min
        if not self.simplified and np.any(scales < floor):
            raise DomainError(f"Scales must be at least v_min={floor}")
        object.__setattr__(self, "rewards", rewards)
        object.__setattr__(self, "scales", scales)

    @classmethod
    def zeros(cls, keys: Sequence[PrefKey], simplified: bool = False) -> BTRewardModel:
        n = len(keys)
        return cls(tuple(keys), np.zeros(n), np.ones(n), simplified)

    @cached_property
    def key_index(self) -> dict[PrefKey, int]:
        return {k: i for i, k in enumerate(self.keys)}

    def reward(self, key: PrefKey) -> float:
        if key not in self.key_index:
            raise ContextKeyError(key, where="reward model")
        return float(self.rewards[self.key_index[key]])

    def scale(self, key: PrefKey) -> float:
        if key not in self.key_index:
            raise ContextKeyError(key, where="reward model")
        return float(self.scales[self.key_index[key]])

    def with_tables(self, rewards: np.ndarray, scales: np.ndarray | None = None) -> BTRewardModel:
        return BTRewardModel(
            self.keys, rewards, self.scales if scales is None else scales, self.simplified
        )

    def rows(self) -> Iterator[tuple[PrefKey, float, float]]:
        for key, r, v in zip(self.keys, self.rewards, self.scales, strict=True):
            yield key, float(r), float(v)


def _aligned_counts(
    model: BTRewardModel, data: PrefDataset
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pair counts of ``data`` re-indexed into the model's key table."""
    index = model.key_index
    lookup = np.empty(len(data.keys), dtype=np.int64)
    for i, key in enumerate(data.keys):
        if key not in index:
            raise ContextKeyError(key, where="reward model")
        lookup[i] = index[key]
    plus, minus, counts = data.pair_counts
    return lookup[plus], lookup[minus], counts


def _ce_terms(
    rewards: np.ndarray,
    scales: np.ndarray,
    plus: np.ndarray,
    minus: np.ndarray,
    counts: np.ndarray,
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Mean CE, dL/dmargin per unique pair, the margins and the denominators."""
    if not counts.sum():
        raise DomainError("Preference dataset is empty")
    denom = np.sqrt((scales[plus] ** 2 + scales[minus] ** 2) / 2.0)
    margin = (rewards[plus] - rewards[minus]) / denom
    n = float(counts.sum())
    value = float(np.dot(counts, np.logaddexp(0.0, -margin)) / n)
    d_margin = -expit(-margin) * counts / n
    return value, d_margin, margin, denom


def ce_loss_full(model: BTRewardModel, data: PrefDataset) -> LossReport:
    """Mean -log sigmoid((R+ - R-) / sqrt((V+^2 + V-^2) / 2)).

    The gradient has columns ("R", "V").

    Raises:
        ContextKeyError: If a dataset key is missing from the model.
        DomainError: If the dataset is empty.
    """
    plus, minus, counts = _aligned_counts(model, data)
    value, d_margin, margin, denom = _ce_terms(
        model.rewards, model.scales, plus, minus, counts
    )
    n = len(model.keys)
    grad = np.zeros((n, 2))
    np.add.at(grad[:, 0], plus, d_margin / denom)
    np.add.at(grad[:, 0], minus, -d_margin / denom)
    # dm/dV_k = -m V_k / (2 s^2)
    common = -d_margin * margin / (2.0 * denom**2)
    np.add.at(grad[:, 1], plus, common * model.scales[plus])
    np.add.at(grad[:, 1], minus, common * model.scales[minus])
    return LossReport(value, grad, model.keys, ("R", "V"))


def ce_loss_simplified(model: BTRewardModel, data: PrefDataset) -> LossReport:
    """Mean -log sigmoid(R+ - R-), with V fixed to 1; the gradient has the single column "R"."""
    plus, minus, counts = _aligned_counts(model, data)
    ones = np.ones(len(model.keys))
    value, d_margin, _, _ = _ce_terms(model.rewards, ones, plus, minus, counts)
    grad = np.zeros((len(model.keys), 1))
    np.add.at(grad[:, 0], plus, d_margin)
    np.add.at(grad[:, 0], minus, -d_margin)
    return LossReport(value, grad, model.keys, ("R",))


def sample_pref_dataset(
    truth: BTGroundTruth,
    pairing: Sequence[PairSpec],
    n_per_pair: int,
    rng_seed: int | np.random.Generator,
    link: WinLink = WinLink.TANH,
) -> PrefDataset:
    """Draw ``n_per_pair`` labelled comparisons for every pair.

    Each draw is an independent Bernoulli trial with the ground-truth win
    probability of the first response. Triples keep pairing order, then draw order.

    Raises:
        ContextKeyError: If a pairing names a key the ground truth lacks.
        DomainError: If ``n_per_pair`` is not positive.
    """
    if n_per_pair < 1:
        raise DomainError(f"n_per_pair must be positive, got {n_per_pair}")
    if not pairing:
        raise DomainError("No pairs to compare")
    rng = np.random.default_rng(rng_seed)
    keys = tuple(sorted({(x, y) for x, a, b in pairing for y in (a, b)}))
    index = {k: i for i, k in enumerate(keys)}
    plus_parts: list[np.ndarray] = []
    minus_parts: list[np.ndarray] = []
    for x, a, b in pairing:
        r_a, v_a = truth.lookup((x, a))
        r_b, v_b = truth.lookup((x, b))
        p = float(win_probability(link, r_a, r_b, v_a, v_b))
        a_wins = rng.random(n_per_pair) < p
        ia, ib = index[(x, a)], index[(x, b)]
        plus_parts.append(np.where(a_wins, ia, ib))
        minus_parts.append(np.where(a_wins, ib, ia))
    data = PrefDataset(keys, np.concatenate(plus_parts), np.concatenate(minus_parts))
    logger.debug(
        "Sampled %d comparisons over %d pairs (%s link)",
        len(data),
        len(pairing),
        WinLink(link).value,
    )
    return data
