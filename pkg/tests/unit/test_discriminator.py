"""Tests for discriminators, critics and the adversarial losses."""

from __future__ import annotations

import math
from typing import Any

import numpy as np
import pytest

from align_lab.adversarial.discriminator import (
    Critic,
    Discriminator,
    Granularity,
    PolicyView,
    discriminator_loss,
    dump_discriminator,
    fgan_critic_loss,
    fgan_policy_loss,
    js_minimax_value,
    load_discriminator,
    optimal_critic,
    optimal_discriminator,
    policy_js_loss,
    policy_rkl_loss,
)
from align_lab.adversarial.fdiv import FDivSpec, FFamily
from align_lab.core.exceptions import ContextKeyError, DomainError, SupportMismatchError
from align_lab.core.occupancy import (
    DivergenceKind,
    divergence,
    exact_occupancy,
    trajectory_distribution,
)
from align_lab.core.policy import TabularPolicy
from align_lab.core.token_mdp import PromptDist
from align_lab.objectives.gradcheck import finite_diff_gradient, finite_diff_vector, relative_error
from align_lab.objectives.report import cosine_similarity

GRANULARITIES = [Granularity.STATE_ACTION, Granularity.TRAJECTORY]


def tables(
    expert: TabularPolicy, policy: TabularPolicy, prompts: PromptDist, gran: Granularity
) -> tuple[Any, Any]:
    """(expert, policy) tables of one granularity."""
    if gran is Granularity.STATE_ACTION:
        return exact_occupancy(expert, prompts), exact_occupancy(policy, prompts)
    return trajectory_distribution(expert, prompts), trajectory_distribution(policy, prompts)


class TestDiscriminator:
    """Tests for the Discriminator table."""

    def test_logits_are_clamped(self) -> None:
        disc = Discriminator(Granularity.TRAJECTORY, ("a", "b"), np.array([100.0, -100.0]))
        assert disc.logits.tolist() == [30.0, -30.0]

    def test_shape_and_finiteness(self) -> None:
        with pytest.raises(DomainError):
            Discriminator(Granularity.TRAJECTORY, ("a",), np.zeros(2))
        with pytest.raises(DomainError, match="finite"):
            Discriminator(Granularity.TRAJECTORY, ("a",), np.array([np.nan]))

    def test_aligned_missing_key(self) -> None:
        disc = Discriminator.zeros(Granularity.TRAJECTORY, ["a"])
        with pytest.raises(ContextKeyError):
            disc.aligned(["b"])

    def test_text_roundtrip(
        self, expert: TabularPolicy, policy: TabularPolicy, prompts: PromptDist
    ) -> None:
        for gran in GRANULARITIES:
            exp_t, pol_t = tables(expert, policy, prompts, gran)
            disc = optimal_discriminator(exp_t, pol_t, gran)
            loaded = load_discriminator(dump_discriminator(disc, expert.vocab.digest()))
            assert loaded.keys == disc.keys
            np.testing.assert_array_equal(loaded.logits, disc.logits)


class TestOptimalDiscriminator:
    """Tests for the closed-form D* and the classification loss."""

    @pytest.mark.parametrize("gran", GRANULARITIES)
    def test_output_is_mass_ratio(
        self,
        gran: Granularity,
        expert: TabularPolicy,
        policy: TabularPolicy,
        prompts: PromptDist,
    ) -> None:
        exp_t, pol_t = tables(expert, policy, prompts, gran)
        disc = optimal_discriminator(exp_t, pol_t)
        e = exp_t.as_distribution()
        q = pol_t.as_distribution()
        for key, d in disc.as_mapping().items():
            assert d == pytest.approx(e[key] / (e[key] + q[key]), rel=1e-12)

    def test_granularity_inferred(
        self, expert: TabularPolicy, policy: TabularPolicy, prompts: PromptDist
    ) -> None:
        exp_t, pol_t = tables(expert, policy, prompts, Granularity.TRAJECTORY)
        assert optimal_discriminator(exp_t, pol_t).granularity is Granularity.TRAJECTORY

    def test_disjoint_support_hits_clamp(self) -> None:
        disc = optimal_discriminator({"a": 1.0}, {"b": 1.0}, Granularity.TRAJECTORY)
        assert disc.logits.tolist() == [30.0, -30.0]

    def test_loss_gradient_vanishes_at_optimum(
        self, expert: TabularPolicy, policy: TabularPolicy, prompts: PromptDist
    ) -> None:
        exp_t, pol_t = tables(expert, policy, prompts, Granularity.STATE_ACTION)
        report = discriminator_loss(optimal_discriminator(exp_t, pol_t), exp_t, pol_t)
        assert np.abs(report.gradient).max() < 1e-14

    def test_loss_gradient_matches_finite_differences(
        self,
        expert: TabularPolicy,
        policy: TabularPolicy,
        prompts: PromptDist,
        rng: np.random.Generator,
    ) -> None:
        exp_t, pol_t = tables(expert, policy, prompts, Granularity.TRAJECTORY)
        base = optimal_discriminator(exp_t, pol_t)
        disc = base.with_logits(rng.normal(size=len(base.keys)))
        analytic = discriminator_loss(disc, exp_t, pol_t).gradient
        numeric = finite_diff_vector(
            lambda v: discriminator_loss(disc.with_logits(v), exp_t, pol_t), disc.logits
        )
        assert relative_error(analytic, numeric) < 1e-7

    def test_mass_outside_keys(self) -> None:
        disc = Discriminator.zeros(Granularity.TRAJECTORY, ["a"])
        with pytest.raises(SupportMismatchError):
            discriminator_loss(disc, {"a": 0.5, "b": 0.5}, {"a": 1.0})


class TestPolicyLosses:
    """Tests for the policy side of the RKL and JS games."""

    @pytest.mark.parametrize("gran", GRANULARITIES)
    def test_rkl_identity(
        self,
        gran: Granularity,
        expert: TabularPolicy,
        policy: TabularPolicy,
        prompts: PromptDist,
    ) -> None:
        """At D*, E_pi[-logit] is KL(pi || expert)."""
        exp_t, pol_t = tables(expert, policy, prompts, gran)
        disc = optimal_discriminator(exp_t, pol_t)
        value = policy_rkl_loss(policy, disc, prompts=prompts).value
        assert value == pytest.approx(divergence(exp_t, pol_t, DivergenceKind.RKL), abs=1e-10)

    @pytest.mark.parametrize("gran", GRANULARITIES)
    def test_js_identity(
        self,
        gran: Granularity,
        expert: TabularPolicy,
        policy: TabularPolicy,
        prompts: PromptDist,
    ) -> None:
        exp_t, pol_t = tables(expert, policy, prompts, gran)
        disc = optimal_discriminator(exp_t, pol_t)
        value = js_minimax_value(policy, disc, exp_t, prompts=prompts)
        expected = 2 * divergence(exp_t, pol_t, DivergenceKind.JS) - math.log(4)
        assert value == pytest.approx(expected, abs=1e-10)

    @pytest.mark.parametrize("loss", [policy_rkl_loss, policy_js_loss])
    @pytest.mark.parametrize("gran", GRANULARITIES)
    def test_policy_gradients(
        self,
        loss: Any,
        gran: Granularity,
        expert: TabularPolicy,
        policy: TabularPolicy,
        prompts: PromptDist,
    ) -> None:
        """Gradients hold the discriminator fixed."""
        exp_t, pol_t = tables(expert, policy, prompts, gran)
        disc = optimal_discriminator(exp_t, pol_t)
        analytic = loss(policy, disc, prompts=prompts).gradient
        numeric = finite_diff_gradient(lambda p: loss(p, disc, prompts=prompts), policy)
        assert relative_error(analytic, numeric) < 1e-6

    def test_sampled_estimate_tracks_exact(
        self, expert: TabularPolicy, policy: TabularPolicy, prompts: PromptDist
    ) -> None:
        exp_t, pol_t = tables(expert, policy, prompts, Granularity.TRAJECTORY)
        disc = optimal_discriminator(exp_t, pol_t)
        exact = policy_rkl_loss(policy, disc, prompts=prompts)
        sampled = policy_rkl_loss(
            policy, disc, prompts=prompts, estimator="sampled", n_samples=20000, rng_seed=3
        )
        assert sampled.value == pytest.approx(exact.value, abs=0.05)
        assert cosine_similarity(sampled.gradient, exact.gradient) > 0.9

    def test_sampled_estimate_is_seeded(
        self, expert: TabularPolicy, policy: TabularPolicy, prompts: PromptDist
    ) -> None:
        exp_t, pol_t = tables(expert, policy, prompts, Granularity.STATE_ACTION)
        disc = optimal_discriminator(exp_t, pol_t)
        runs = [
            policy_rkl_loss(
                policy, disc, prompts=prompts, estimator="sampled", n_samples=200, rng_seed=9
            )
            for _ in range(2)
        ]
        assert runs[0].value == runs[1].value
        np.testing.assert_array_equal(runs[0].gradient, runs[1].gradient)

    def test_view_masses(self, policy: TabularPolicy, prompts: PromptDist) -> None:
        for gran in GRANULARITIES:
            view = PolicyView.build(policy, gran, prompts)
            assert view.mass.sum() == pytest.approx(1.0, abs=1e-12)


class TestFGan:
    """Tests for the f-GAN critic and policy losses."""

    SPECS = [
        FDivSpec(FFamily.AIRL),
        FDivSpec(FFamily.GAIL),
        FDivSpec(FFamily.FAIRL),
        FDivSpec(FFamily.ALPHA, 0.5),
    ]

    @pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.name)
    @pytest.mark.parametrize("gran", GRANULARITIES)
    def test_optimal_critic_is_tight(
        self,
        spec: FDivSpec,
        gran: Granularity,
        expert: TabularPolicy,
        policy: TabularPolicy,
        prompts: PromptDist,
    ) -> None:
        """At T* the variational bound equals D_f(expert || policy)."""
        exp_t, pol_t = tables(expert, policy, prompts, gran)
        critic = optimal_critic(exp_t, pol_t, spec)
        bound = -fgan_critic_loss(critic, exp_t, pol_t, spec).value
        assert bound == pytest.approx(divergence(exp_t, pol_t, spec), abs=1e-9)

    @pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.name)
    def test_critic_gradient(
        self,
        spec: FDivSpec,
        expert: TabularPolicy,
        policy: TabularPolicy,
        prompts: PromptDist,
    ) -> None:
        exp_t, pol_t = tables(expert, policy, prompts, Granularity.TRAJECTORY)
        critic = optimal_critic(exp_t, pol_t, spec)
        shifted = critic.with_values(critic.values - 0.05)
        analytic = fgan_critic_loss(shifted, exp_t, pol_t, spec).gradient
        numeric = finite_diff_vector(
            lambda v: fgan_critic_loss(shifted.with_values(v), exp_t, pol_t, spec),
            shifted.values,
        )
        assert relative_error(analytic, numeric) < 1e-6

    def test_critic_values_are_clamped(
        self, expert: TabularPolicy, policy: TabularPolicy, prompts: PromptDist
    ) -> None:
        spec = FDivSpec(FFamily.AIRL)
        exp_t, pol_t = tables(expert, policy, prompts, Granularity.TRAJECTORY)
        critic = optimal_critic(exp_t, pol_t, spec).with_values(np.full(15, 2.0))
        assert fgan_critic_loss(critic, exp_t, pol_t, spec).clamped == 15

    def test_constant_critic_policy_loss(self, policy: TabularPolicy, prompts: PromptDist) -> None:
        """Under T = f'(1) = 1 for FAIRL the state-action loss is minus the expected length."""
        spec = FDivSpec(FFamily.FAIRL)
        view = PolicyView.build(policy, Granularity.STATE_ACTION, prompts)
        critic = Critic.initial(Granularity.STATE_ACTION, view.keys, spec)
        report = fgan_policy_loss(policy, critic, spec, prompts=prompts)
        length = exact_occupancy(policy, prompts).total()
        assert report.value == pytest.approx(-length, abs=1e-12)

    @pytest.mark.parametrize("gran", GRANULARITIES)
    def test_policy_gradient(
        self,
        gran: Granularity,
        expert: TabularPolicy,
        policy: TabularPolicy,
        prompts: PromptDist,
    ) -> None:
        spec = FDivSpec(FFamily.GAIL)
        exp_t, pol_t = tables(expert, policy, prompts, gran)
        critic = optimal_critic(exp_t, pol_t, spec)
        analytic = fgan_policy_loss(policy, critic, spec, prompts=prompts).gradient
        numeric = finite_diff_gradient(
            lambda p: fgan_policy_loss(p, critic, spec, prompts=prompts), policy
        )
        assert relative_error(analytic, numeric) < 1e-6

    def test_critic_shape(self) -> None:
        with pytest.raises(DomainError):
            Critic(Granularity.TRAJECTORY, ("a", "b"), np.zeros(1))
