"""Fitting Bradley-Terry reward models to preference data.

The variance-aware fit parameterizes V = v_min + softplus(W) and optimizes
(R, W) jointly; the simplified fit optimizes R alone. After fitting, the
model is normalized: the geometric mean of V is rescaled to 1 (together with
R, which leaves every margin unchanged) and R is centered per connected
component of the comparison graph, or per domain when keys carry domain labels.
"""

from __future__ import annotations

import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from enum import Enum
from typing import Any

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.special import expit
from scipy.stats import kendalltau

from align_lab.config import get_settings
from align_lab.core.exceptions import DomainError
from align_lab.harness.optim import OptimizerConfig, OptimizerMethod, optimize
from align_lab.preference.bradley_terry import (
    BTGroundTruth,
    BTRewardModel,
    PairSpec,
    PrefDataset,
    PrefKey,
    WinLink,
    ce_loss_full,
    ce_loss_simplified,
    sample_pref_dataset,
)

logger = logging.getLogger("align_lab.preference")

DEFAULT_FIT_CONFIG = OptimizerConfig(
    method=OptimizerMethod.LBFGS, max_iters=2000, grad_tol=1e-9, report_every=100
)


class FitVariant(str, Enum):
    FULL = "full"
    SIMPLIFIED = "simplified"


@dataclass(frozen=True)
class FitReport:
    """Outcome of one reward-model fit."""

    variant: FitVariant
    train_ce: float
    heldout_ce: float | None
    converged: bool
    iterations: int
    grad_norm: float
    n_train: int
    n_heldout: int

    def as_dict(self) -> dict[str, Any]:
        return {
            "variant": self.variant.value,
            "train_ce": self.train_ce,
            "heldout_ce": self.heldout_ce,
            "converged": self.converged,
            "iterations": self.iterations,
            "grad_norm": self.grad_norm,
            "n_train": self.n_train,
            "n_heldout": self.n_heldout,
        }


def _softplus_inverse(y: np.ndarray) -> np.ndarray:
    return y + np.log(-np.expm1(-y))


def _scales_of(w: np.ndarray) -> np.ndarray:
    return get_settings().numerics.v_min + np.logaddexp(0.0, w)


def comparison_components(data: PrefDataset) -> np.ndarray:
    """Connected-component label per key of the comparison graph."""
    n = len(data.keys)
    graph = coo_matrix(
        (np.ones(len(data)), (data.plus, data.minus)), shape=(n, n)
    ).tocsr()
    _, labels = connected_components(graph, directed=False)
    return labels


def centering_groups(
    data: PrefDataset, domains: Mapping[PrefKey, str] | None = None
) -> np.ndarray:
    """Group label per key: its domain, split further by comparison component.

    Keys without a domain label are grouped by component alone.
    """
    components = comparison_components(data)
    if not domains:
        return components
    labels = [(domains.get(key, ""), int(c)) for key, c in zip(data.keys, components, strict=True)]
    index = {label: i for i, label in enumerate(sorted(set(labels)))}
    return np.array([index[label] for label in labels], dtype=np.int64)


def center_rewards(model: BTRewardModel, groups: np.ndarray) -> BTRewardModel:
    """Shift R to mean 0 within each group; V is untouched."""
    rewards = model.rewards.copy()
    for label in np.unique(groups):
        members = groups == label
        rewards[members] -= rewards[members].mean()
    return model.with_tables(rewards)


def normalize_model(model: BTRewardModel, groups: np.ndarray) -> BTRewardModel:
    """Rescale R and V jointly (full model) and center R within each group.

    The joint scale fixes the geometric mean of V to 1 unless that would push
    some V below v_min; then the smallest V lands on v_min and the geometric
    mean stays above 1. The rescale never changes a margin. Centering keeps
    every margin only when each group is a union of comparison components;
    domains that share a component have their cross-domain margins shifted.
    """
    scales = model.scales.copy()
    rewards = model.rewards.copy()
    if not model.simplified:
        floor = get_settings().numerics.v_min
        lam = float(np.exp(-np.mean(np.log(scales))))
        lam = max(lam, floor / float(scales.min()))
        rewards *= lam
        # rounding only
        scales = np.maximum(scales * lam, floor)
    return center_rewards(model.with_tables(rewards, scales), groups)


def split_heldout(
    data: PrefDataset, fraction: float, rng: np.random.Generator
) -> tuple[PrefDataset, PrefDataset | None]:
    if not 0.0 <= fraction < 1.0:
        raise DomainError(f"Held-out fraction must lie in [0, 1), got {fraction}")
    n_held = int(round(fraction * len(data)))
    if n_held == 0:
        return data, None
    order = rng.permutation(len(data))
    return data.subset(np.sort(order[n_held:])), data.subset(np.sort(order[:n_held]))


def _objective(data: PrefDataset, variant: FitVariant, keys: tuple[PrefKey, ...]) -> Any:
    n = len(keys)
    if variant is FitVariant.SIMPLIFIED:
        template = BTRewardModel.zeros(keys, simplified=True)

        def simplified(x: np.ndarray) -> tuple[float, np.ndarray]:
            report = ce_loss_simplified(template.with_tables(x), data)
            return report.value, report.flat()

        return simplified

    template = BTRewardModel.zeros(keys)

    def full(x: np.ndarray) -> tuple[float, np.ndarray]:
        rewards, w = x[:n], x[n:]
        report = ce_loss_full(template.with_tables(rewards, _scales_of(w)), data)
        grad = report.gradient
        return report.value, np.concatenate([grad[:, 0], grad[:, 1] * expit(w)])

    return full


def _unpack(x: np.ndarray, variant: FitVariant, keys: tuple[PrefKey, ...]) -> BTRewardModel:
    n = len(keys)
    if variant is FitVariant.SIMPLIFIED:
        return BTRewardModel(keys, x[:n].copy(), np.ones(n), simplified=True)
    return BTRewardModel(keys, x[:n].copy(), _scales_of(x[n:]))


def _initial(variant: FitVariant, n: int) -> np.ndarray:
    if variant is FitVariant.SIMPLIFIED:
        return np.zeros(n)
    w0 = _softplus_inverse(np.full(n, 1.0 - get_settings().numerics.v_min))
    return np.concatenate([np.zeros(n), w0])


def cross_entropy(model: BTRewardModel, data: PrefDataset) -> float:
    if model.simplified:
        return ce_loss_simplified(model, data).value
    return ce_loss_full(model, data).value


def fit_reward_model(
    data: PrefDataset,
    variant: FitVariant = FitVariant.FULL,
    config: OptimizerConfig | None = None,
    *,
    heldout: float = 0.2,
    seed: int | None = None,
    domains: Mapping[PrefKey, str] | None = None,
) -> tuple[BTRewardModel, FitReport]:
    """Fit R (and V) by minimizing the cross-entropy on a training split.

    Args:
        data: Preference triples.
        variant: FULL fits R and V, SIMPLIFIED fits R with V = 1.
        config: Optimizer settings; L-BFGS by default.
        heldout: Fraction of triples held out for evaluation.
        seed: Seed of the held-out split.
        domains: Optional domain label per key. R is centered within each
            domain (and comparison component); without labels, per component.

    Returns:
        The normalized model and a report with train and held-out CE. The CE
        is measured before per-domain centering, on the component-centered
        fit, so it reflects the fitted margins.
        Non-convergence is reported through ``converged``, not raised.

    Raises:
        DomainError: If the dataset is empty or a response never appears in training.
    """
    variant = FitVariant(variant)
    if not len(data):
        raise DomainError("Cannot fit a reward model to an empty dataset")
    rng = np.random.default_rng(seed if seed is not None else get_settings().lab.default_seed)
    train, held = split_heldout(data, heldout, rng)
    seen = np.zeros(len(data.keys), dtype=bool)
    seen[train.plus] = True
    seen[train.minus] = True
    if not seen.all():
        missing = data.keys[int(np.argmin(seen))]
        raise DomainError(f"Response {missing} never appears in the training split")

    result = optimize(
        _objective(train, variant, data.keys),
        _initial(variant, len(data.keys)),
        config or DEFAULT_FIT_CONFIG,
    )
    fitted = normalize_model(_unpack(result.x, variant, data.keys), comparison_components(data))
    report = FitReport(
        variant=variant,
        train_ce=cross_entropy(fitted, train),
        heldout_ce=cross_entropy(fitted, held) if held is not None else None,
        converged=result.converged,
        iterations=result.iterations,
        grad_norm=result.grad_norm,
        n_train=len(train),
        n_heldout=len(held) if held is not None else 0,
    )
    model = center_rewards(fitted, centering_groups(data, domains)) if domains else fitted
    if not result.converged:
        logger.warning(
            "Reward-model fit (%s) did not converge: |g|=%.3e after %d iterations",
            variant.value,
            result.grad_norm,
            result.iterations,
        )
    logger.info(
        "Fitted %s reward model: train CE %.6f, held-out CE %s",
        variant.value,
        report.train_ce,
        "n/a" if report.heldout_ce is None else f"{report.heldout_ce:.6f}",
        extra={"metrics": report.as_dict()},
    )
    return model, report


def online_update(
    data: PrefDataset,
    variant: FitVariant = FitVariant.FULL,
    step_size: float = 0.1,
    model: BTRewardModel | None = None,
) -> tuple[BTRewardModel, list[float]]:
    """Sequential fit: one gradient step on each observed triple, in data order.

    Returns the final (unnormalized) model and the loss of each triple
    before its update.
    """
    variant = FitVariant(variant)
    if step_size <= 0:
        raise DomainError(f"step_size must be positive, got {step_size}")
    simplified = variant is FitVariant.SIMPLIFIED
    model = model or BTRewardModel.zeros(data.keys, simplified=simplified)
    index = np.array([model.key_index[k] for k in data.keys], dtype=np.int64)
    rewards = model.rewards.copy()
    w = None if simplified else _softplus_inverse(model.scales - get_settings().numerics.v_min)
    losses: list[float] = []
    for i, j in zip(index[data.plus].tolist(), index[data.minus].tolist(), strict=True):
        scale_i = 1.0 if w is None else float(_scales_of(w[i]))
        scale_j = 1.0 if w is None else float(_scales_of(w[j]))
        denom = np.sqrt((scale_i**2 + scale_j**2) / 2.0)
        margin = (rewards[i] - rewards[j]) / denom
        losses.append(float(np.logaddexp(0.0, -margin)))
        d_margin = -float(expit(-margin))
        rewards[i] -= step_size * d_margin / denom
        rewards[j] += step_size * d_margin / denom
        if w is not None:
            common = -d_margin * margin / (2.0 * denom**2)
            w[i] -= step_size * common * scale_i * float(expit(w[i]))
            w[j] -= step_size * common * scale_j * float(expit(w[j]))
    scales = np.ones(len(rewards)) if w is None else _scales_of(w)
    return model.with_tables(rewards, scales), losses


@dataclass(frozen=True)
class RecoveryReport:
    """How well a fit recovers the hidden scores."""

    variant: FitVariant
    link: WinLink
    n_per_pair: int
    kendall_tau: float
    max_gap_error: float
    fit: FitReport

    def as_dict(self) -> dict[str, Any]:
        return {
            "variant": self.variant.value,
            "link": self.link.value,
            "n_per_pair": self.n_per_pair,
            "kendall_tau": self.kendall_tau,
            "max_gap_error": self.max_gap_error,
            **{f"fit_{k}": v for k, v in self.fit.as_dict().items() if k != "variant"},
        }


def normalized_truth(truth: BTGroundTruth, keys: Sequence[PrefKey]) -> np.ndarray:
    """Hidden scores on the fitted model's scale: divided by the geometric mean of sqrt(v^2)."""
    scores = np.array([truth.scores[k] for k in keys])
    scales = np.sqrt(np.array([truth.variances[k] for k in keys]))
    return scores * float(np.exp(-np.mean(np.log(scales))))


def _recovery_groups(truth: BTGroundTruth, keys: Sequence[PrefKey]) -> np.ndarray:
    labels = [(key[0], truth.domains.get(key, "")) for key in keys]
    index = {label: i for i, label in enumerate(sorted(set(labels)))}
    return np.array([index[label] for label in labels], dtype=np.int64)


def score_recovery(
    truth: BTGroundTruth, model: BTRewardModel, normalize_scale: bool = True
) -> tuple[float, float]:
    """(Kendall tau, max pairwise gap error) between fitted and hidden scores.

    Gaps are compared within each (prompt, domain) group. When the truth has
    domains, hidden scores are centered per domain before the rank comparison,
    matching the fitted model.
    """
    keys = model.keys
    hidden = (
        normalized_truth(truth, keys)
        if normalize_scale
        else np.array([truth.scores[k] for k in keys])
    )
    groups = _recovery_groups(truth, keys)
    if truth.domains:
        hidden = center_rewards(model.with_tables(hidden), groups).rewards
    tau = float(kendalltau(hidden, model.rewards)[0])
    worst = 0.0
    for label in np.unique(groups):
        members = groups == label
        fitted_gaps = np.subtract.outer(model.rewards[members], model.rewards[members])
        hidden_gaps = np.subtract.outer(hidden[members], hidden[members])
        worst = max(worst, float(np.max(np.abs(fitted_gaps - hidden_gaps))))
    return tau, worst


def recovery_experiment(
    truth: BTGroundTruth,
    pairing: Sequence[PairSpec],
    n_per_pair: int,
    variant: FitVariant = FitVariant.FULL,
    *,
    link: WinLink = WinLink.TANH,
    seed: int = 0,
    heldout: float = 0.2,
) -> RecoveryReport:
    """Generate data from ``truth`` with ``link``, fit ``variant``, and score the recovery."""
    data = sample_pref_dataset(truth, pairing, n_per_pair, seed, link=link)
    model, fit = fit_reward_model(
        data, variant, heldout=heldout, seed=seed, domains=truth.domains or None
    )
    tau, gap = score_recovery(truth, model, normalize_scale=variant is FitVariant.FULL)
    return RecoveryReport(FitVariant(variant), WinLink(link), n_per_pair, tau, gap, fit)


def mismatch_experiment(
    truth: BTGroundTruth,
    pairing: Sequence[PairSpec],
    n_per_pair: int,
    *,
    seed: int = 0,
) -> dict[WinLink, RecoveryReport]:
    """Fit the logistic full model to data generated by each link."""
    return {
        link: recovery_experiment(truth, pairing, n_per_pair, FitVariant.FULL, link=link, seed=seed)
        for link in (WinLink.TANH, WinLink.ERF)
    }


def size_sweep(
    truth: BTGroundTruth,
    pairing: Sequence[PairSpec],
    sizes: Sequence[int],
    variant: FitVariant = FitVariant.FULL,
    *,
    seed: int = 0,
) -> list[RecoveryReport]:
    """Recovery as the number of comparisons per pair grows, sizes in the given order."""
    reports = [recovery_experiment(truth, pairing, n, variant, seed=seed) for n in sizes]
    for report in reports:
        logger.debug(
            "n_per_pair=%d tau=%.3f gap error=%.4f",
            report.n_per_pair,
            report.kendall_tau,
            report.max_gap_error,
            extra={"metrics": report.as_dict()},
        )
    return reports


def heteroscedastic_truth(
    easy: Mapping[str, float] | None = None,
    hard: Mapping[str, float] | None = None,
    easy_variance: float = 1.0,
    hard_variance: float = 16.0,
    prompt: str = "x",
) -> BTGroundTruth:
    """Two response groups under one prompt with different evaluation noise."""
    easy = easy or {"e0": -1.0, "e1": 0.0, "e2": 1.0}
    hard = hard or {"h0": -4.0, "h1": 0.0, "h2": 4.0}
    scores: dict[PrefKey, float] = {}
    variances: dict[PrefKey, float] = {}
    domains: dict[PrefKey, str] = {}
    for group, table, var in (("easy", easy, easy_variance), ("hard", hard, hard_variance)):
        for y, r in table.items():
            scores[(prompt, y)] = r
            variances[(prompt, y)] = var
            domains[(prompt, y)] = group
    return BTGroundTruth(scores, variances, domains)
