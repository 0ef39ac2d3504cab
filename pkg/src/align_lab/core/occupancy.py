"""Occupancy measures, trajectory distributions and divergences.

Exact tables come from evaluating a policy on the compiled prefix tree;
empirical ones from counting a demonstration dataset. ``divergence`` is the
oracle every training method is measured against.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Protocol, TypeAlias, runtime_checkable

import numpy as np

from align_lab.config import get_settings
from align_lab.core.exceptions import DomainError, SupportMismatchError
from align_lab.core.policy import TabularPolicy
from align_lab.core.prefix_tree import SAKey, build_prefix_tree, format_sa_key
from align_lab.core.token_mdp import (
    PromptDist,
    TokenSeq,
    TrajKey,
    Trajectory,
    format_traj_key,
)

logger = logging.getLogger("align_lab.core.occupancy")

DemoPair: TypeAlias = tuple[TokenSeq, TokenSeq]


class DivergenceKind(str, Enum):
    """Named divergences understood by ``divergence``."""

    FKL = "fkl"
    RKL = "rkl"
    JS = "js"
    TV = "tv"


@runtime_checkable
class FGenerator(Protocol):
    """A convex generator f with known boundary behaviour."""

    def f(self, u: np.ndarray) -> np.ndarray: ...

    @property
    def f_at_zero(self) -> float: ...

    @property
    def slope_at_infinity(self) -> float: ...


@runtime_checkable
class HasDistribution(Protocol):
    def as_distribution(self) -> Mapping[Any, float]: ...


@dataclass(frozen=True)
class OccupancyTable:
    """State-action occupancy masses keyed by (prompt, generated, action)."""

    entries: Mapping[SAKey, float]
    gamma: float = 1.0
    prompt_dist: PromptDist | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if not 0.0 < self.gamma <= 1.0:
            raise DomainError(f"Discount must lie in (0, 1], got {self.gamma}")
        if any(m < 0 or not math.isfinite(m) for m in self.entries.values()):
            raise DomainError("Occupancy masses must be finite and non-negative")

    def total(self) -> float:
        return math.fsum(self.entries[k] for k in sorted(self.entries))

    def as_distribution(self) -> dict[SAKey, float]:
        """Masses normalized to sum to one."""
        total = self.total()
        if total <= 0:
            raise DomainError("Cannot normalize an empty occupancy table")
        return {key: self.entries[key] / total for key in sorted(self.entries)}

    def vector(self, keys: Sequence[SAKey]) -> np.ndarray:
        """Masses aligned to ``keys``; absent keys have mass 0."""
        return np.fromiter((self.entries.get(k, 0.0) for k in keys), float, count=len(keys))

    def level_masses(self) -> dict[int, float]:
        """Total mass per generation step k."""
        levels: dict[int, float] = {}
        for (_, generated, _), mass in sorted(self.entries.items()):
            levels[len(generated)] = levels.get(len(generated), 0.0) + mass
        return levels

    def rows(self) -> list[tuple[str, float]]:
        """(key, mass) rows sorted by canonical key string."""
        return sorted((format_sa_key(k), v) for k, v in self.entries.items())


@dataclass(frozen=True)
class TrajDist:
    """Per-prompt response distributions d(y|x) with prompt weights."""

    entries: Mapping[TrajKey, float]
    prompt_weights: Mapping[TokenSeq, float]
    support: tuple[Trajectory, ...] = ()

    def __post_init__(self) -> None:
        sums: dict[TokenSeq, float] = {}
        for (prompt, _), mass in self.entries.items():
            if mass < 0:
                raise DomainError("Trajectory masses must be non-negative")
            sums[prompt] = sums.get(prompt, 0.0) + mass
        for prompt, total in sums.items():
            if abs(total - 1.0) > 1e-10:
                raise DomainError(f"Masses for prompt {prompt} sum to {total}, not 1")
        if not self.support:
            support = tuple(Trajectory(p, r) for p, r in sorted(self.entries))
            object.__setattr__(self, "support", support)

    def conditional(self, prompt: TokenSeq) -> dict[TokenSeq, float]:
        return {r: m for (p, r), m in self.entries.items() if p == prompt}

    def as_distribution(self) -> dict[TrajKey, float]:
        """Joint p(x) d(y|x) over (prompt, response) keys."""
        return {
            key: self.prompt_weights.get(key[0], 0.0) * self.entries[key]
            for key in sorted(self.entries)
        }

    def mass(self, key: TrajKey) -> float:
        return self.entries.get(key, 0.0)

    def rows(self) -> list[tuple[str, float]]:
        return sorted((format_traj_key(k), v) for k, v in self.entries.items())


def exact_occupancy(
    policy: TabularPolicy,
    prompt_dist: PromptDist,
    gamma: float = 1.0,
) -> OccupancyTable:
    """Exact rho(s, a) = p(x) gamma^k prod_{t<=k} pi(a_t|s_t) over the reachable tree.

    Mass is accumulated up to and including the first terminal step.

    Raises:
        EnumerationBudgetError: If the tree exceeds the enumeration budget.
        ContextKeyError: If the policy misses a reachable context.
    """
    tree = build_prefix_tree(policy.vocab, prompt_dist, policy.capacity)
    ev = tree.evaluate(policy, gamma=gamma)
    entries = dict(zip(tree.sa_keys, ev.rho.tolist(), strict=True))
    return OccupancyTable(entries=entries, gamma=gamma, prompt_dist=prompt_dist)


def trajectory_distribution(policy: TabularPolicy, prompt_dist: PromptDist) -> TrajDist:
    """Exact d(y|x) = prod_t pi(a_t|s_t) for every enumerable response."""
    tree = build_prefix_tree(policy.vocab, prompt_dist, policy.capacity)
    ev = tree.evaluate(policy)
    entries = dict(zip(tree.traj_keys, ev.traj_prob.tolist(), strict=True))
    return TrajDist(entries=entries, prompt_weights=dict(prompt_dist.items()))


def as_pairs(dataset: Iterable[Trajectory | DemoPair]) -> list[DemoPair]:
    pairs: list[DemoPair] = []
    for item in dataset:
        if isinstance(item, Trajectory):
            pairs.append(item.key)
        else:
            prompt, response = item
            pairs.append((tuple(prompt), tuple(response)))
    if not pairs:
        raise DomainError("Dataset is empty")
    return pairs


def empirical_traj_dist(dataset: Iterable[Trajectory | DemoPair]) -> TrajDist:
    """Per-prompt relative frequencies of the responses in a dataset.

    Raises:
        DomainError: If the dataset is empty.
    """
    pairs = as_pairs(dataset)
    counts = Counter(pairs)
    per_prompt = Counter(p for p, _ in pairs)
    entries = {key: counts[key] / per_prompt[key[0]] for key in sorted(counts)}
    weights = {p: per_prompt[p] / len(pairs) for p in sorted(per_prompt)}
    return TrajDist(entries=entries, prompt_weights=weights)


def empirical_occupancy(
    dataset: Iterable[Trajectory | DemoPair],
    gamma: float = 1.0,
) -> OccupancyTable:
    """Counts of (prefix, next token) pairs, each weighted gamma^k / |D|.

    Raises:
        DomainError: If the dataset is empty.
    """
    pairs = as_pairs(dataset)
    n = len(pairs)
    entries: dict[SAKey, float] = {}
    for prompt, response in pairs:
        for k, action in enumerate(response):
            key = (prompt, response[:k], action)
            entries[key] = entries.get(key, 0.0) + gamma**k / n
    return OccupancyTable(entries={k: entries[k] for k in sorted(entries)}, gamma=gamma)


def _aligned(p: Any, q: Any) -> tuple[list[Any], np.ndarray, np.ndarray]:
    def table(obj: Any) -> Mapping[Any, float]:
        if isinstance(obj, HasDistribution):
            return obj.as_distribution()
        if isinstance(obj, Mapping):
            return obj
        return dict(enumerate(np.asarray(obj, dtype=np.float64).tolist()))

    pt, qt = table(p), table(q)
    keys = sorted(set(pt) | set(qt))
    pv = np.fromiter((pt.get(k, 0.0) for k in keys), float, count=len(keys))
    qv = np.fromiter((qt.get(k, 0.0) for k in keys), float, count=len(keys))
    if np.any(pv < 0) or np.any(qv < 0):
        raise DomainError("Distribution tables must be non-negative")
    return keys, pv, qv


def _kl(p: np.ndarray, q: np.ndarray, keys: list[Any]) -> float:
    bad = (p > 0) & (q <= 0)
    if np.any(bad):
        raise SupportMismatchError(
            "KL is infinite: first argument has mass where the second has none",
            key=keys[int(np.flatnonzero(bad)[0])],
        )
    mask = p > 0
    return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))


def _f_divergence(gen: FGenerator, p: np.ndarray, q: np.ndarray, keys: list[Any]) -> float:
    both = (p > 0) & (q > 0)
    only_q = (p <= 0) & (q > 0)
    only_p = (p > 0) & (q <= 0)
    total = float(np.sum(q[both] * gen.f(p[both] / q[both])))
    if np.any(only_q):
        total += float(np.sum(q[only_q])) * gen.f_at_zero
    if np.any(only_p):
        total += float(np.sum(p[only_p])) * gen.slope_at_infinity
    if not math.isfinite(total):
        offender = np.flatnonzero(only_q if np.any(only_q) else only_p)
        raise SupportMismatchError(
            "f-divergence is infinite on the given supports",
            key=keys[int(offender[0])] if offender.size else None,
        )
    return total


def divergence(
    p: Mapping[Any, float] | HasDistribution | Sequence[float] | np.ndarray,
    q: Mapping[Any, float] | HasDistribution | Sequence[float] | np.ndarray,
    kind: DivergenceKind | FGenerator,
    smoothing: bool = False,
) -> float:
    """Divergence between two distribution tables over the union of their keys.

    FKL(p, q) = sum p log(p/q) with 0 log 0 = 0, RKL(p, q) = FKL(q, p),
    JS is the mean KL to the midpoint, TV is half the L1 distance, and an
    f-generator gives sum q f(p/q).

    Args:
        p: First distribution (mapping, array, or table with ``as_distribution``).
        q: Second distribution.
        kind: A ``DivergenceKind`` or an f-generator such as an ``FDivSpec``.
        smoothing: Add ``numerics.smoothing_eps`` to every entry and renormalize.

    Raises:
        SupportMismatchError: If the divergence is infinite and smoothing is off.
    """
    keys, pv, qv = _aligned(p, q)
    if smoothing:
        eps = get_settings().numerics.smoothing_eps
        pv = (pv + eps) / (pv + eps).sum()
        qv = (qv + eps) / (qv + eps).sum()

    if isinstance(kind, DivergenceKind):
        if kind is DivergenceKind.FKL:
            value = _kl(pv, qv, keys)
        elif kind is DivergenceKind.RKL:
            value = _kl(qv, pv, keys)
        elif kind is DivergenceKind.JS:
            mid = 0.5 * (pv + qv)
            value = 0.5 * _kl(pv, mid, keys) + 0.5 * _kl(qv, mid, keys)
        else:
            value = 0.5 * float(np.abs(pv - qv).sum())
    else:
        value = _f_divergence(kind, pv, qv, keys)
    # rounding can push exact zeros slightly negative
    return max(value, 0.0)


def total_variation(p: Any, q: Any) -> float:
    return divergence(p, q, DivergenceKind.TV)
