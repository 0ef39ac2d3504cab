"""Tabular discriminators, critics and their losses.

Both adversaries live on one of two key spaces: state-action keys of the
normalized occupancy, or (prompt, response) keys of the joint trajectory
distribution. Policy-side losses are exact expectations over the prefix
tree unless the sampled estimator is requested.
"""

from __future__ import annotations

import logging
from collections.abc import Hashable, Mapping, Sequence
from dataclasses import dataclass
from enum import Enum
from typing import Any, Literal

import numpy as np
from scipy.special import expit

from align_lab.adversarial.fdiv import FDivSpec
from align_lab.config import get_settings
from align_lab.core.exceptions import ContextKeyError, DomainError, SupportMismatchError
from align_lab.core.occupancy import HasDistribution, OccupancyTable, TrajDist
from align_lab.core.policy import TabularPolicy, sample_dataset
from align_lab.core.prefix_tree import TreeEval, build_prefix_tree, format_sa_key, parse_sa_key
from align_lab.core.serialization import dump_table, load_table
from align_lab.core.token_mdp import PromptDist, format_traj_key, parse_traj_key
from align_lab.objectives.forward_kl import DemoDataset, weighted_nll
from align_lab.objectives.report import LossReport

logger = logging.getLogger("align_lab.adversarial")

Estimator = Literal["exact", "sampled"]


class Granularity(str, Enum):
    """Key space an adversary is defined on."""

    STATE_ACTION = "state_action"
    TRAJECTORY = "trajectory"


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def _clamp_logits(logits: np.ndarray) -> np.ndarray:
    bound = get_settings().numerics.logit_clamp
    return np.clip(logits, -bound, bound)


@dataclass(frozen=True, eq=False)
class Discriminator:
    """Logit table D(key) = sigmoid(logit), logits clamped to +/- the configured bound."""

    granularity: Granularity
    keys: tuple[Hashable, ...]
    logits: np.ndarray

    def __post_init__(self) -> None:
        logits = np.asarray(self.logits, dtype=np.float64)
        if logits.shape != (len(self.keys),):
            raise DomainError("Discriminator needs one logit per key")
        if not np.all(np.isfinite(logits)):
            raise DomainError("Discriminator logits must be finite")
        object.__setattr__(self, "logits", _clamp_logits(logits))

    @classmethod
    def zeros(cls, granularity: Granularity, keys: Sequence[Hashable]) -> Discriminator:
        """D = 1/2 everywhere."""
        return cls(granularity, tuple(keys), np.zeros(len(keys)))

    def output(self) -> np.ndarray:
        return expit(self.logits)

    def with_logits(self, logits: np.ndarray) -> Discriminator:
        return Discriminator(self.granularity, self.keys, logits)

    def as_mapping(self) -> dict[Hashable, float]:
        return dict(zip(self.keys, self.output().tolist(), strict=True))

    def aligned(self, keys: Sequence[Hashable]) -> np.ndarray:
        """Logits reordered to ``keys``.

        Raises:
            ContextKeyError: If a key has no logit.
        """
        if tuple(keys) == self.keys:
            return self.logits
        index = {k: i for i, k in enumerate(self.keys)}
        try:
            return self.logits[[index[k] for k in keys]]
        except KeyError as exc:
            raise ContextKeyError(exc.args[0], where="discriminator") from None


@dataclass(frozen=True, eq=False)
class Critic:
    """Variational witness T(key), kept inside the conjugate domain."""

    granularity: Granularity
    keys: tuple[Hashable, ...]
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != (len(self.keys),):
            raise DomainError("Critic needs one value per key")
        if not np.all(np.isfinite(values)):
            raise DomainError("Critic values must be finite")
        object.__setattr__(self, "values", values)

    @classmethod
    def initial(cls, granularity: Granularity, keys: Sequence[Hashable], spec: FDivSpec) -> Critic:
        """Constant f'(1), the optimum when both distributions agree."""
        value = float(spec.f_prime(np.array(1.0)))
        return cls(granularity, tuple(keys), np.full(len(keys), value))

    def with_values(self, values: np.ndarray) -> Critic:
        return Critic(self.granularity, self.keys, values)

    def aligned(self, keys: Sequence[Hashable]) -> np.ndarray:
        if tuple(keys) == self.keys:
            return self.values
        index = {k: i for i, k in enumerate(self.keys)}
        try:
            return self.values[[index[k] for k in keys]]
        except KeyError as exc:
            raise ContextKeyError(exc.args[0], where="critic") from None


def granularity_of(table: Any) -> Granularity:
    if isinstance(table, OccupancyTable):
        return Granularity.STATE_ACTION
    if isinstance(table, TrajDist):
        return Granularity.TRAJECTORY
    raise DomainError(f"Cannot infer granularity from {type(table).__name__}")


def _distribution(table: Any) -> Mapping[Hashable, float]:
    if isinstance(table, HasDistribution):
        return table.as_distribution()
    if isinstance(table, Mapping):
        return table
    raise DomainError(f"Not a distribution table: {type(table).__name__}")


def _vector(table: Any, keys: Sequence[Hashable]) -> np.ndarray:
    """Normalized masses aligned to ``keys``.

    Raises:
        SupportMismatchError: If the table has mass on a key outside ``keys``.
    """
    dist = _distribution(table)
    known = set(keys)
    for key, mass in dist.items():
        if mass > 0 and key not in known:
            raise SupportMismatchError("Distribution has mass outside the adversary's keys", key)
    vec = np.fromiter((dist.get(k, 0.0) for k in keys), float, count=len(keys))
    total = vec.sum()
    if total <= 0:
        raise DomainError("Distribution has no mass on the adversary's keys")
    return vec / total


def _union_keys(rho_exp: Any, rho_pi: Any) -> tuple[Hashable, ...]:
    exp, pol = _distribution(rho_exp), _distribution(rho_pi)
    keys = {k for k, v in exp.items() if v > 0} | {k for k, v in pol.items() if v > 0}
    return tuple(sorted(keys))


def optimal_discriminator(
    rho_exp: Any,
    rho_pi: Any,
    granularity: Granularity | None = None,
) -> Discriminator:
    """Closed-form D* = rho_exp / (rho_exp + rho_pi) on the union support.

    Keys where both masses vanish are omitted. The logit is log(rho_exp/rho_pi),
    clamped, so D* = 0 and 1 are represented by the clamp bound.
    """
    gran = granularity or granularity_of(rho_exp)
    keys = _union_keys(rho_exp, rho_pi)
    e, q = _vector(rho_exp, keys), _vector(rho_pi, keys)
    bound = get_settings().numerics.logit_clamp
    with np.errstate(divide="ignore"):
        logits = np.log(e) - np.log(q)
    logits = np.nan_to_num(logits, nan=0.0, posinf=bound, neginf=-bound)
    return Discriminator(gran, keys, logits)


def discriminator_loss(disc: Discriminator, rho_exp: Any, rho_pi: Any) -> LossReport:
    """Negative classification objective -(E_exp log D + E_pi log(1 - D)).

    The logit gradient is sigmoid(l) (e + q) - e.

    Raises:
        SupportMismatchError: If either table has mass outside the discriminator's keys.
    """
    e, q = _vector(rho_exp, disc.keys), _vector(rho_pi, disc.keys)
    logits = disc.logits
    value = float(np.sum(e * _softplus(-logits) + q * _softplus(logits)))
    grad = expit(logits) * (e + q) - e
    return LossReport(value, grad, disc.keys)


@dataclass(frozen=True, eq=False)
class PolicyView:
    """A policy evaluated on the key space of one granularity."""

    policy: TabularPolicy
    granularity: Granularity
    ev: TreeEval
    keys: tuple[Hashable, ...]
    mass: np.ndarray

    @classmethod
    def build(
        cls, policy: TabularPolicy, granularity: Granularity, prompts: PromptDist
    ) -> PolicyView:
        tree = build_prefix_tree(policy.vocab, prompts, policy.capacity)
        ev = tree.evaluate(policy)
        if granularity is Granularity.STATE_ACTION:
            return cls(policy, granularity, ev, tree.sa_keys, ev.rho / ev.rho.sum())
        return cls(policy, granularity, ev, tree.traj_keys, ev.traj_joint)

    def expectation(self, payoff: np.ndarray) -> LossReport:
        """sum_key mass * payoff and its exact logit gradient, payoff held fixed."""
        value = float(np.dot(self.mass, payoff))
        n_ctx = len(self.policy.keys)
        ev = self.ev
        if self.granularity is Granularity.STATE_ACTION:
            z = float(ev.rho.sum())
            grad = (
                ev.path_score_gradient(payoff * ev.rho, n_ctx)
                - value * ev.path_score_gradient(ev.rho, n_ctx)
            ) / z
        else:
            grad = ev.path_score_gradient(ev.leaf_weights(payoff * self.mass), n_ctx)
        return LossReport(value, grad, self.policy.keys, self.policy.vocab.action_ids)

    def occupancy_sum(self, payoff: np.ndarray) -> LossReport:
        """sum over unnormalized occupancy (or joint) of payoff, with its gradient."""
        ev = self.ev
        n_ctx = len(self.policy.keys)
        if self.granularity is Granularity.STATE_ACTION:
            value = float(np.dot(ev.rho, payoff))
            grad = ev.path_score_gradient(payoff * ev.rho, n_ctx)
            return LossReport(value, grad, self.policy.keys, self.policy.vocab.action_ids)
        return self.expectation(payoff)


def _sampled_expectation(
    policy: TabularPolicy,
    granularity: Granularity,
    prompts: PromptDist,
    payoff: Mapping[Hashable, float],
    n_samples: int,
    rng_seed: int | np.random.Generator,
) -> LossReport:
    """Score-function estimate of the same expectation as ``PolicyView.expectation``.

    Trajectory payoffs use a mean baseline; state-action payoffs are a ratio
    of per-trajectory sums over mean length, differentiated by the quotient rule.
    """
    samples = sample_dataset(policy, prompts, n_samples, rng_seed)
    totals = np.empty(n_samples)
    lengths = np.empty(n_samples)
    for i, traj in enumerate(samples):
        if granularity is Granularity.TRAJECTORY:
            totals[i] = payoff[traj.key]
            lengths[i] = 1.0
        else:
            totals[i] = sum(
                payoff[(traj.prompt, traj.response[:k], a)] for k, a in enumerate(traj.response)
            )
            lengths[i] = len(traj.response)
    mean_len = float(lengths.mean())
    value = float(totals.sum() / lengths.sum())
    coef = (totals - value * lengths) / (n_samples * mean_len)
    data = DemoDataset.from_trajectories(samples)
    action_index = {tok: i for i, tok in enumerate(policy.vocab.action_ids)}
    records = data.records(policy.context_order, action_index)
    # weighted_nll differentiates -sum coef log pi, so flip its sign
    nll = weighted_nll(policy, records, coef[records.pair], 1.0)
    return LossReport(value, -nll.gradient, policy.keys, policy.vocab.action_ids)


def _policy_expectation(
    policy: TabularPolicy,
    granularity: Granularity,
    prompts: PromptDist,
    payoff_of: Any,
    estimator: Estimator,
    n_samples: int,
    rng_seed: int | np.random.Generator,
) -> LossReport:
    view = PolicyView.build(policy, granularity, prompts)
    payoff = payoff_of(view.keys)
    if estimator == "exact":
        return view.expectation(payoff)
    table = dict(zip(view.keys, payoff.tolist(), strict=True))
    return _sampled_expectation(policy, granularity, prompts, table, n_samples, rng_seed)


def policy_rkl_loss(
    policy: TabularPolicy,
    disc: Discriminator,
    granularity: Granularity | None = None,
    *,
    prompts: PromptDist,
    estimator: Estimator = "exact",
    n_samples: int = 1000,
    rng_seed: int | np.random.Generator = 0,
) -> LossReport:
    """E_pi[log(1 - D) - log D] = E_pi[-logit], minimized by the policy.

    At D = D* this equals KL(rho_pi || rho_exp).
    """
    gran = granularity or disc.granularity
    return _policy_expectation(
        policy, gran, prompts, lambda keys: -disc.aligned(keys), estimator, n_samples, rng_seed
    )


def policy_js_loss(
    policy: TabularPolicy,
    disc: Discriminator,
    granularity: Granularity | None = None,
    *,
    prompts: PromptDist,
    estimator: Estimator = "exact",
    n_samples: int = 1000,
    rng_seed: int | np.random.Generator = 0,
) -> LossReport:
    """E_pi[log(1 - D)], the policy's side of the Jensen-Shannon minimax."""
    gran = granularity or disc.granularity
    return _policy_expectation(
        policy,
        gran,
        prompts,
        lambda keys: -_softplus(disc.aligned(keys)),
        estimator,
        n_samples,
        rng_seed,
    )


def js_minimax_value(
    policy: TabularPolicy,
    disc: Discriminator,
    rho_exp: Any,
    granularity: Granularity | None = None,
    *,
    prompts: PromptDist,
) -> float:
    """E_exp[log D] + E_pi[log(1 - D)] at the given pair.

    Maximized over D this equals 2 JS(rho_exp, rho_pi) - log 4.
    """
    gran = granularity or disc.granularity
    view = PolicyView.build(policy, gran, prompts)
    logits = disc.aligned(view.keys)
    e = _vector(rho_exp, view.keys)
    return float(-np.sum(e * _softplus(-logits)) - np.sum(view.mass * _softplus(logits)))


def optimal_critic(
    rho_exp: Any,
    rho_pi: Any,
    spec: FDivSpec,
    granularity: Granularity | None = None,
) -> Critic:
    """Closed-form maximizer T* = f'(rho_exp / rho_pi), clamped into dom(f*)."""
    gran = granularity or granularity_of(rho_exp)
    keys = _union_keys(rho_exp, rho_pi)
    e, q = _vector(rho_exp, keys), _vector(rho_pi, keys)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(q > 0, e / np.where(q > 0, q, 1.0), np.inf)
        raw = spec.f_prime(ratio)
    bound = get_settings().numerics.logit_clamp
    raw = np.nan_to_num(raw, nan=0.0, posinf=bound, neginf=-bound)
    values, _ = spec.clamp(raw)
    return Critic(gran, keys, values)


def fgan_critic_loss(critic: Critic, rho_exp: Any, rho_pi: Any, spec: FDivSpec) -> LossReport:
    """-(E_exp[T] - E_pi[f*(T)]) with gradient -e + q (f*)'(T).

    Values outside dom(f*) are clamped first; the count is reported.
    """
    values, clamped = spec.clamp(critic.values)
    if clamped:
        logger.warning("Clamped %d critic values into dom(f*)", clamped)
    e, q = _vector(rho_exp, critic.keys), _vector(rho_pi, critic.keys)
    value = -(float(np.dot(e, values)) - float(np.dot(q, spec.f_star(values))))
    grad = -e + q * spec.f_star_prime(values)
    return LossReport(value, grad, critic.keys, clamped=clamped)


def fgan_policy_loss(
    policy: TabularPolicy,
    critic: Critic,
    spec: FDivSpec,
    granularity: Granularity | None = None,
    *,
    prompts: PromptDist,
) -> LossReport:
    """-E_tau[sum_t f*(T(s_t, a_t))], exact over the tree.

    The state-action form sums over the unnormalized occupancy, so a
    constant critic c gives -f*(c) times the expected length.
    """
    gran = granularity or critic.granularity
    view = PolicyView.build(policy, gran, prompts)
    values, clamped = spec.clamp(critic.aligned(view.keys))
    report = view.occupancy_sum(-spec.f_star(values))
    return LossReport(report.value, report.gradient, report.rows, report.columns, clamped=clamped)


def _key_label(granularity: Granularity, key: Any) -> str:
    if granularity is Granularity.STATE_ACTION:
        return format_sa_key(key)
    return format_traj_key(key)


def dump_discriminator(disc: Discriminator, vocab_hash: str) -> str:
    """Serialize a discriminator in the policy text format."""
    header = {
        "kind": "discriminator",
        "vocab_hash": vocab_hash,
        "granularity": disc.granularity.value,
    }
    rows = (
        (_key_label(disc.granularity, k), [v])
        for k, v in zip(disc.keys, disc.logits, strict=True)
    )
    return dump_table(header, rows)


def load_discriminator(text: str) -> Discriminator:
    header, rows = load_table(text)
    gran = Granularity(header.get("granularity", Granularity.STATE_ACTION.value))
    parse = parse_sa_key if gran is Granularity.STATE_ACTION else parse_traj_key
    keys = tuple(parse(k) for k, _ in rows)
    return Discriminator(gran, keys, np.array([v[0] for _, v in rows]))
