"""Invariant suite behind ``align check`` and the position-weighting audit."""

from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from align_lab.adversarial.discriminator import (
    Critic,
    Discriminator,
    Granularity,
    PolicyView,
    discriminator_loss,
    fgan_critic_loss,
    fgan_policy_loss,
    js_minimax_value,
    optimal_critic,
    optimal_discriminator,
    policy_js_loss,
    policy_rkl_loss,
)
from align_lab.adversarial.fdiv import FDivSpec, FFamily, f_conjugate, numeric_conjugate
from align_lab.adversarial.training import (
    AdversarialObjective,
    Schedule,
    TrainingHistory,
    alternating_train,
)
from align_lab.core.occupancy import (
    DivergenceKind,
    divergence,
    exact_occupancy,
    total_variation,
    trajectory_distribution,
)
from align_lab.core.policy import ContextOrder, TabularPolicy, sample_dataset
from align_lab.core.token_mdp import PromptDist, Vocab
from align_lab.harness.optim import OptimizerConfig, optimize
from align_lab.hooks.performance import Timer
from align_lab.objectives.forward_kl import (
    DemoDataset,
    exact_fkl_occupancy_loss,
    sft_loss,
    traj_fkl_loss,
    weighted_fkl_loss,
)
from align_lab.objectives.gradcheck import finite_diff_gradient, finite_diff_vector, relative_error
from align_lab.objectives.report import LossReport, cosine_similarity
from align_lab.preference.bradley_terry import (
    BTRewardModel,
    PrefDataset,
    bt_win_prob_tanh,
    ce_loss_full,
    ce_loss_simplified,
)

logger = logging.getLogger("align_lab.harness.checks")

FAMILIES = (
    FDivSpec(FFamily.AIRL),
    FDivSpec(FFamily.GAIL),
    FDivSpec(FFamily.FAIRL),
    FDivSpec(FFamily.ALPHA, 0.5),
)

# Interior test points for each conjugate domain.
CONJUGATE_POINTS = {
    FFamily.AIRL: np.linspace(-5.0, -0.2, 9),
    FFamily.GAIL: np.linspace(-4.0, math.log(2.0) - 0.1, 9),
    FFamily.FAIRL: np.linspace(-3.0, 3.0, 9),
    FFamily.ALPHA: np.linspace(-4.0, 1.8, 9),
}

TRAINED_ROUNDS = 100


@dataclass(frozen=True)
class Instance:
    """A random desk-scale tree with a policy and an expert on it."""

    vocab: Vocab
    prompts: PromptDist
    capacity: int
    policy: TabularPolicy
    expert: TabularPolicy


def random_policy(
    vocab: Vocab,
    capacity: int,
    order: ContextOrder,
    prompts: PromptDist,
    rng: np.random.Generator,
    scale: float = 1.0,
) -> TabularPolicy:
    """Gaussian logits on every reachable context."""
    base = TabularPolicy.uniform(vocab, capacity, order, prompts)
    return base.with_vector(rng.normal(scale=scale, size=base.n_params))


def random_instance(
    rng: np.random.Generator,
    capacity: int = 3,
    order: ContextOrder = "full",
    symbols: tuple[str, ...] = ("a", "b"),
) -> Instance:
    vocab = Vocab.build(symbols)
    prompts = PromptDist.single() if rng.random() < 0.5 else PromptDist.uniform([(0,), (1,)])
    return Instance(
        vocab,
        prompts,
        capacity,
        random_policy(vocab, capacity, order, prompts, rng),
        random_policy(vocab, capacity, "full", prompts, rng, scale=1.5),
    )


def _targets(inst: Instance, granularity: Granularity) -> tuple[Any, Any]:
    """(expert, policy) tables at one granularity."""
    if granularity is Granularity.STATE_ACTION:
        return (
            exact_occupancy(inst.expert, inst.prompts),
            exact_occupancy(inst.policy, inst.prompts),
        )
    return (
        trajectory_distribution(inst.expert, inst.prompts),
        trajectory_distribution(inst.policy, inst.prompts),
    )


@dataclass(frozen=True)
class CheckResult:
    """Outcome of one invariant: the worst measured error against its tolerance."""

    name: str
    description: str
    measured: float
    tolerance: float
    instances: int
    duration_s: float = 0.0

    @property
    def passed(self) -> bool:
        return math.isfinite(self.measured) and self.measured <= self.tolerance

    def as_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "description": self.description,
            "measured": self.measured,
            "tolerance": self.tolerance,
            "instances": self.instances,
            "passed": self.passed,
        }


@dataclass(frozen=True)
class AuditInstance:
    """Gradient cosines along one exact-FKL training run."""

    index: int
    iterations: list[int]
    cosines: list[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.cosines))

    @property
    def minimum(self) -> float:
        return float(np.min(self.cosines))

    def as_dict(self) -> dict[str, Any]:
        return {
            "index": self.index,
            "mean": self.mean,
            "min": self.minimum,
            "iterations": self.iterations,
            "cosines": self.cosines,
        }


@dataclass
class CheckSuiteReport:
    quick: bool
    seed: int
    results: list[CheckResult] = field(default_factory=list)
    audit: list[AuditInstance] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def failures(self) -> list[CheckResult]:
        return [r for r in self.results if not r.passed]

    def as_dict(self) -> dict[str, Any]:
        return {
            "quick": self.quick,
            "seed": self.seed,
            "passed": self.passed,
            "checks": [r.as_dict() for r in self.results],
            "audit": {
                "description": (
                    "cosine between weighted_fkl_loss and exact_fkl_occupancy_loss "
                    "gradients while training an order-1 policy on the exact objective"
                ),
                "instances": [a.as_dict() for a in self.audit],
            },
        }


def check_sft_traj_parallel(rng: np.random.Generator, n: int) -> float:
    """Worst |1 - cos| between SFT and trajectory-FKL gradients on sampled datasets."""
    worst = 0.0
    for _ in range(n):
        inst = random_instance(rng)
        size = int(rng.integers(5, 60))
        data = DemoDataset.from_trajectories(sample_dataset(inst.expert, inst.prompts, size, rng))
        sft = sft_loss(inst.policy, data).gradient
        cos = cosine_similarity(sft, traj_fkl_loss(inst.policy, data).gradient)
        worst = max(worst, abs(1.0 - cos))
    return worst


def check_matched_training(rng: np.random.Generator, n: int) -> float:
    """Worst TV between SFT and trajectory-FKL runs with matched step sizes."""
    worst = 0.0
    config = OptimizerConfig(step_size=0.5, max_iters=100, grad_tol=1e-14)
    for _ in range(n):
        inst = random_instance(rng)
        data = DemoDataset.from_trajectories(sample_dataset(inst.expert, inst.prompts, 32, rng))
        scaled = config.model_copy(
            update={"step_size": config.step_size * data.n_steps / data.n_traj}
        )
        x0 = inst.policy.to_vector()
        sft = optimize(lambda x: sft_loss(inst.policy.with_vector(x), data), x0, scaled)
        traj = optimize(lambda x: traj_fkl_loss(inst.policy.with_vector(x), data), x0, config)
        worst = max(
            worst,
            total_variation(
                trajectory_distribution(inst.policy.with_vector(sft.x), inst.prompts),
                trajectory_distribution(inst.policy.with_vector(traj.x), inst.prompts),
            ),
        )
    return worst


def check_rkl_identity(rng: np.random.Generator, n: int) -> float:
    """Policy RKL loss at D* against KL(pi || exp), both granularities."""
    worst = 0.0
    for _ in range(n):
        inst = random_instance(rng)
        for gran in Granularity:
            expert, ours = _targets(inst, gran)
            disc = optimal_discriminator(expert, ours, gran)
            value = policy_rkl_loss(inst.policy, disc, prompts=inst.prompts).value
            worst = max(worst, abs(value - divergence(expert, ours, DivergenceKind.RKL)))
    return worst


def check_js_identity(rng: np.random.Generator, n: int) -> float:
    """Saddle value at D* against 2 JS - log 4."""
    worst = 0.0
    for _ in range(n):
        inst = random_instance(rng)
        for gran in Granularity:
            expert, ours = _targets(inst, gran)
            disc = optimal_discriminator(expert, ours, gran)
            value = js_minimax_value(inst.policy, disc, expert, prompts=inst.prompts)
            target = 2.0 * divergence(expert, ours, DivergenceKind.JS) - math.log(4.0)
            worst = max(worst, abs(value - target))
    return worst


def _trained_discriminator(inst: Instance, gran: Granularity) -> TrainingHistory:
    expert, _ = _targets(inst, gran)
    keys = PolicyView.build(inst.policy, gran, inst.prompts).keys
    return alternating_train(
        inst.policy,
        Discriminator.zeros(gran, keys),
        Schedule(disc_steps=50, rounds=TRAINED_ROUNDS, report_every=TRAINED_ROUNDS),
        objective=AdversarialObjective.RKL,
        target=expert,
        prompts=inst.prompts,
        freeze_policy=True,
    )


def check_trained_discriminator(rng: np.random.Generator, n: int) -> float:
    """Sup-norm gap of a trained discriminator to D* with the policy frozen (C=4)."""
    worst = 0.0
    for _ in range(n):
        inst = random_instance(rng, capacity=4)
        for gran in Granularity:
            gap = _trained_discriminator(inst, gran).final.disc_gap
            worst = max(worst, math.inf if gap is None else gap)
    return worst


def check_trained_js(rng: np.random.Generator, n: int) -> float:
    """Saddle value at a trained discriminator against 2 JS - log 4."""
    worst = 0.0
    for _ in range(n):
        inst = random_instance(rng, capacity=4)
        for gran in Granularity:
            expert, ours = _targets(inst, gran)
            disc = _trained_discriminator(inst, gran).adversary
            assert isinstance(disc, Discriminator)
            value = js_minimax_value(inst.policy, disc, expert, prompts=inst.prompts)
            target = 2.0 * divergence(expert, ours, DivergenceKind.JS) - math.log(4.0)
            worst = max(worst, abs(value - target))
    return worst


def check_fgan_tightness(rng: np.random.Generator, n: int) -> float:
    """Critic objective at T* against the direct D_f for every family."""
    worst = 0.0
    for _ in range(n):
        inst = random_instance(rng)
        for gran in Granularity:
            expert, ours = _targets(inst, gran)
            for spec in FAMILIES:
                critic = optimal_critic(expert, ours, spec, gran)
                bound = -fgan_critic_loss(critic, expert, ours, spec).value
                worst = max(worst, abs(bound - divergence(expert, ours, spec)))
    return worst


def check_conjugates(rng: np.random.Generator, n: int) -> float:
    """Closed-form f* against the numeric supremum on interior points."""
    del rng, n
    worst = 0.0
    for spec in FAMILIES:
        for t in CONJUGATE_POINTS[spec.family]:
            worst = max(worst, abs(f_conjugate(spec, float(t)) - numeric_conjugate(spec, float(t))))
    return worst


def check_correspondence(rng: np.random.Generator, n: int) -> float:
    """FAIRL's D_f is KL(p || q) and AIRL's is KL(q || p) on random pairs."""
    fairl, airl = FDivSpec(FFamily.FAIRL), FDivSpec(FFamily.AIRL)
    worst = 0.0
    for _ in range(n):
        size = int(rng.integers(2, 12))
        p, q = rng.dirichlet(np.ones(size)), rng.dirichlet(np.ones(size))
        worst = max(
            worst,
            abs(divergence(p, q, fairl) - divergence(p, q, DivergenceKind.FKL)),
            abs(divergence(p, q, airl) - divergence(p, q, DivergenceKind.RKL)),
        )
    return worst


def _policy_gradient_errors(inst: Instance, rng: np.random.Generator) -> list[float]:
    data = DemoDataset.from_trajectories(sample_dataset(inst.expert, inst.prompts, 40, rng))
    rho_exp = exact_occupancy(inst.expert, inst.prompts)
    losses: list[Callable[[TabularPolicy], LossReport]] = [
        lambda p: sft_loss(p, data),
        lambda p: weighted_fkl_loss(p, data),
        lambda p: traj_fkl_loss(p, data),
        lambda p: exact_fkl_occupancy_loss(p, rho_exp, prompts=inst.prompts),
    ]
    for gran in Granularity:
        keys = PolicyView.build(inst.policy, gran, inst.prompts).keys
        disc = Discriminator(gran, keys, rng.normal(size=len(keys)))
        spec = FAMILIES[int(rng.integers(len(FAMILIES)))]
        critic = Critic(gran, keys, spec.f_prime(rng.uniform(0.5, 2.0, size=len(keys))))
        losses += [
            lambda p, d=disc: policy_rkl_loss(p, d, prompts=inst.prompts),
            lambda p, d=disc: policy_js_loss(p, d, prompts=inst.prompts),
            lambda p, c=critic, s=spec: fgan_policy_loss(p, c, s, prompts=inst.prompts),
        ]
    return [
        relative_error(loss(inst.policy).gradient, finite_diff_gradient(loss, inst.policy))
        for loss in losses
    ]


def _adversary_gradient_errors(inst: Instance, rng: np.random.Generator) -> list[float]:
    errors = []
    for gran in Granularity:
        expert, ours = _targets(inst, gran)
        keys = PolicyView.build(inst.policy, gran, inst.prompts).keys
        disc = Discriminator(gran, keys, rng.normal(size=len(keys)))
        errors.append(
            relative_error(
                discriminator_loss(disc, expert, ours).gradient,
                finite_diff_vector(
                    lambda v: discriminator_loss(disc.with_logits(v), expert, ours), disc.logits
                ),
            )
        )
        for spec in FAMILIES:
            critic = Critic(gran, keys, spec.f_prime(rng.uniform(0.5, 2.0, size=len(keys))))
            errors.append(
                relative_error(
                    fgan_critic_loss(critic, expert, ours, spec).gradient,
                    finite_diff_vector(
                        lambda v, c=critic, s=spec: fgan_critic_loss(
                            c.with_values(v), expert, ours, s
                        ),
                        critic.values,
                    ),
                )
            )
    return errors


def _bt_gradient_errors(rng: np.random.Generator) -> list[float]:
    keys = tuple(("x", f"y{i}") for i in range(4))
    triples = []
    for _ in range(60):
        i, j = rng.choice(len(keys), size=2, replace=False)
        triples.append(("x", keys[i][1], keys[j][1]))
    data = PrefDataset.from_triples(triples)
    model = BTRewardModel(keys, rng.normal(size=4), rng.uniform(0.5, 2.0, size=4))
    stacked = np.column_stack([model.rewards, model.scales])

    def full(x: np.ndarray) -> LossReport:
        table = x.reshape(-1, 2)
        return ce_loss_full(model.with_tables(table[:, 0], table[:, 1]), data)

    simple = BTRewardModel.zeros(keys, simplified=True).with_tables(model.rewards)
    return [
        relative_error(ce_loss_full(model, data).gradient, finite_diff_vector(full, stacked)),
        relative_error(
            ce_loss_simplified(simple, data).gradient,
            finite_diff_vector(
                lambda r: ce_loss_simplified(simple.with_tables(r), data), simple.rewards
            ),
        ),
    ]


def check_gradients(rng: np.random.Generator, n: int) -> float:
    """Worst relative error of every analytic gradient against central differences."""
    worst = 0.0
    for _ in range(n):
        inst = random_instance(rng, capacity=2)
        ordered = Instance(
            inst.vocab,
            inst.prompts,
            inst.capacity,
            random_policy(inst.vocab, inst.capacity, 1, inst.prompts, rng),
            inst.expert,
        )
        errors = [
            *_policy_gradient_errors(inst, rng),
            *_policy_gradient_errors(ordered, rng),
            *_adversary_gradient_errors(inst, rng),
            *_bt_gradient_errors(rng),
        ]
        worst = max(worst, *errors)
    return worst


def check_bt_link(rng: np.random.Generator, n: int) -> float:
    """Win probability is monotone in the score gap and p(a, b) + p(b, a) = 1."""
    del n
    gaps = np.linspace(-5.0, 5.0, 101)
    va, vb = rng.uniform(0.5, 2.0, size=2)
    p = np.asarray(bt_win_prob_tanh(gaps, 0.0, va, vb))
    flipped = np.asarray(bt_win_prob_tanh(0.0, gaps, vb, va))
    if not np.all(np.diff(p) > 0):
        return math.inf
    return float(np.max(np.abs(p + flipped - 1.0)))


@dataclass(frozen=True)
class _Check:
    name: str
    fn: Callable[[np.random.Generator, int], float]
    tolerance: float
    instances: int
    quick_instances: int
    slow: bool = False


CHECKS: tuple[_Check, ...] = (
    _Check("sft_traj_parallel", check_sft_traj_parallel, 1e-10, 20, 5),
    _Check("matched_training", check_matched_training, 1e-8, 5, 2),
    _Check("rkl_identity", check_rkl_identity, 1e-6, 20, 5),
    _Check("js_identity", check_js_identity, 1e-6, 20, 5),
    _Check("trained_discriminator", check_trained_discriminator, 1e-3, 3, 1, slow=True),
    _Check("trained_js", check_trained_js, 1e-3, 3, 1, slow=True),
    _Check("fgan_tightness", check_fgan_tightness, 1e-4, 20, 5),
    _Check("conjugates", check_conjugates, 1e-6, 1, 1),
    _Check("divergence_correspondence", check_correspondence, 1e-9, 100, 100),
    _Check("gradient_integrity", check_gradients, 1e-5, 3, 1),
    _Check("bt_link", check_bt_link, 1e-12, 1, 1),
)


def _audit_instance(
    index: int, inst: Instance, config: OptimizerConfig, every: int
) -> AuditInstance:
    data = DemoDataset.exact(trajectory_distribution(inst.expert, inst.prompts))
    rho_exp = exact_occupancy(inst.expert, inst.prompts)
    steps: list[int] = []
    cosines: list[float] = []

    def exact(x: np.ndarray) -> LossReport:
        return exact_fkl_occupancy_loss(inst.policy.with_vector(x), rho_exp, prompts=inst.prompts)

    def record(iteration: int, x: np.ndarray, value: float) -> None:
        if iteration % every:
            return
        surrogate = weighted_fkl_loss(inst.policy.with_vector(x), data)
        steps.append(iteration)
        cosines.append(cosine_similarity(surrogate.gradient, exact(x).gradient))

    optimize(exact, inst.policy.to_vector(), config, record)
    return AuditInstance(index, steps, cosines)


def weighting_audit(
    n_instances: int = 10,
    iterations: int = 60,
    every: int = 5,
    seed: int = 0,
) -> list[AuditInstance]:
    """Track how well the position-weighted surrogate points along the exact gradient.

    Each instance trains an order-1 policy by gradient descent on the exact
    occupancy KL and records the cosine between the two gradients.
    """
    rng = np.random.default_rng(seed)
    config = OptimizerConfig(step_size=0.5, max_iters=iterations, grad_tol=1e-14)
    return [
        _audit_instance(index, random_instance(rng, order=1), config, every)
        for index in range(n_instances)
    ]


def run_checks(quick: bool = False, seed: int = 0) -> CheckSuiteReport:
    """Run the invariant suite; ``quick`` uses fewer instances and skips training checks."""
    report = CheckSuiteReport(quick=quick, seed=seed)
    for offset, check in enumerate(CHECKS):
        if quick and check.slow:
            continue
        n = check.quick_instances if quick else check.instances
        rng = np.random.default_rng([seed, offset])
        with Timer(check.name) as timer:
            measured = check.fn(rng, n)
        result = CheckResult(
            check.name,
            (check.fn.__doc__ or "").strip(),
            float(measured),
            check.tolerance,
            n,
            timer.duration_s,
        )
        level = logging.INFO if result.passed else logging.WARNING
        logger.log(
            level,
            "%s: %.3e (tol %.0e)",
            check.name,
            measured,
            check.tolerance,
            extra={"metrics": result.as_dict()},
        )
        report.results.append(result)
    report.audit = weighting_audit(
        n_instances=3 if quick else 10, iterations=20 if quick else 60, seed=seed
    )
    return report
