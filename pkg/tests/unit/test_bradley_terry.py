"""Tests for Bradley-Terry win probabilities, datasets and losses."""

from __future__ import annotations

import math

import numpy as np
import pytest

from align_lab.core.exceptions import ContextKeyError, DomainError
from align_lab.objectives.gradcheck import finite_diff_vector, relative_error
from align_lab.preference.bradley_terry import (
    BTGroundTruth,
    BTRewardModel,
    PrefDataset,
    WinLink,
    bt_win_prob_gauss,
    bt_win_prob_tanh,
    ce_loss_full,
    ce_loss_simplified,
    sample_pref_dataset,
    win_probability,
)

TRIPLES = [
    ("x", "a", "b"),
    ("x", "a", "b"),
    ("x", "b", "a"),
    ("x", "c", "a"),
    ("y", "p", "q"),
]


@pytest.fixture
def data() -> PrefDataset:
    return PrefDataset.from_triples(TRIPLES)


@pytest.fixture
def model(data: PrefDataset) -> BTRewardModel:
    rng = np.random.default_rng(5)
    n = len(data.keys)
    return BTRewardModel(data.keys, rng.normal(size=n), rng.uniform(0.5, 2.0, size=n))


class TestWinProbabilities:
    """Tests for the tanh and erf link functions."""

    def test_tanh_form(self) -> None:
        expected = 0.5 + 0.5 * math.tanh(1.0 / math.sqrt(2 * (1.0 + 1.0)))
        assert bt_win_prob_tanh(1.0, 0.0, 1.0, 1.0) == pytest.approx(expected, abs=1e-15)

    def test_gauss_form(self) -> None:
        # Phi(1) for a unit gap with total variance 1
        assert bt_win_prob_gauss(1.0, 0.0, 0.5, 0.5) == pytest.approx(0.8413447460685429)

    @pytest.mark.parametrize("link", list(WinLink))
    def test_symmetry_and_ties(self, link: WinLink) -> None:
        forward = win_probability(link, 0.7, -0.2, 1.5, 0.4)
        backward = win_probability(link, -0.2, 0.7, 0.4, 1.5)
        assert forward + backward == pytest.approx(1.0, abs=1e-15)
        assert win_probability(link, 2.0, 2.0, 3.0, 0.1) == 0.5

    @pytest.mark.parametrize("link", list(WinLink))
    def test_probabilities_stay_open(self, link: WinLink) -> None:
        high = win_probability(link, 1e6, 0.0, 1e-3, 1e-3)
        low = win_probability(link, -1e6, 0.0, 1e-3, 1e-3)
        assert 0.0 < low < 0.5 < high < 1.0

    def test_noisier_comparisons_are_closer_to_even(self) -> None:
        sharp = bt_win_prob_tanh(1.0, 0.0, 1.0, 1.0)
        noisy = bt_win_prob_tanh(1.0, 0.0, 16.0, 16.0)
        assert 0.5 < noisy < sharp

    def test_vectorized(self) -> None:
        out = bt_win_prob_tanh(np.array([0.0, 1.0]), np.zeros(2), np.ones(2), np.ones(2))
        assert isinstance(out, np.ndarray)
        assert out.shape == (2,)

    @pytest.mark.parametrize("variance", [0.0, -1.0, math.nan])
    def test_non_positive_variance(self, variance: float) -> None:
        with pytest.raises(DomainError, match="positive"):
            bt_win_prob_gauss(0.0, 1.0, variance, 1.0)
        with pytest.raises(DomainError, match="positive"):
            bt_win_prob_tanh(0.0, 1.0, 1.0, variance)


class TestGroundTruth:
    """Tests for BTGroundTruth."""

    def test_homoscedastic(self) -> None:
        truth = BTGroundTruth.homoscedastic("x", {"a": 1.0, "b": 0.0}, variance=2.0)
        assert truth.lookup(("x", "a")) == (1.0, 2.0)
        assert truth.keys == (("x", "a"), ("x", "b"))

    def test_key_tables_must_match(self) -> None:
        with pytest.raises(DomainError, match="share"):
            BTGroundTruth({("x", "a"): 0.0}, {("x", "b"): 1.0})

    def test_non_positive_variance(self) -> None:
        with pytest.raises(DomainError, match="Non-positive"):
            BTGroundTruth({("x", "a"): 0.0}, {("x", "a"): 0.0})

    def test_unknown_key(self) -> None:
        truth = BTGroundTruth.homoscedastic("x", {"a": 1.0})
        with pytest.raises(ContextKeyError):
            truth.lookup(("x", "zz"))

    def test_all_pairs_stay_within_prompts(self) -> None:
        truth = BTGroundTruth(
            {("x", "a"): 0.0, ("x", "b"): 1.0, ("x", "c"): 2.0, ("y", "d"): 0.0, ("y", "e"): 1.0},
            dict.fromkeys([("x", "a"), ("x", "b"), ("x", "c"), ("y", "d"), ("y", "e")], 1.0),
        )
        assert truth.all_pairs() == [
            ("x", "a", "b"),
            ("x", "a", "c"),
            ("x", "b", "c"),
            ("y", "d", "e"),
        ]
        assert truth.all_pairs("y") == [("y", "d", "e")]


class TestPrefDataset:
    """Tests for PrefDataset."""

    def test_from_triples(self, data: PrefDataset) -> None:
        assert len(data) == 5
        assert data.keys == (("x", "a"), ("x", "b"), ("x", "c"), ("y", "p"), ("y", "q"))
        assert list(data.triples) == TRIPLES

    def test_pair_counts(self, data: PrefDataset) -> None:
        plus, minus, counts = data.pair_counts
        table = {(int(i), int(j)): int(c) for i, j, c in zip(plus, minus, counts, strict=True)}
        assert table == {(0, 1): 2, (1, 0): 1, (2, 0): 1, (3, 4): 1}

    def test_win_rate(self, data: PrefDataset) -> None:
        assert data.win_rate("x", "a", "b") == pytest.approx(2 / 3)
        assert data.win_rate("x", "c", "a") == 1.0
        with pytest.raises(DomainError, match="No comparisons"):
            data.win_rate("x", "b", "c")

    def test_subset(self, data: PrefDataset) -> None:
        part = data.subset(np.array([0, 4]))
        assert list(part.triples) == [("x", "a", "b"), ("y", "p", "q")]
        assert part.keys == data.keys

    def test_self_comparison_rejected(self) -> None:
        with pytest.raises(DomainError, match="itself"):
            PrefDataset((("x", "a"), ("x", "b")), np.array([0]), np.array([0]))

    def test_cross_prompt_rejected(self) -> None:
        with pytest.raises(DomainError, match="different prompts"):
            PrefDataset((("x", "a"), ("y", "b")), np.array([0]), np.array([1]))

    def test_index_arrays_are_read_only(self, data: PrefDataset) -> None:
        with pytest.raises(ValueError):
            data.plus[0] = 1


class TestRewardModel:
    """Tests for BTRewardModel."""

    def test_zeros(self, data: PrefDataset) -> None:
        model = BTRewardModel.zeros(data.keys)
        assert model.reward(("x", "a")) == 0.0
        assert model.scale(("y", "q")) == 1.0

    def test_scale_floor(self, data: PrefDataset) -> None:
        scales = np.ones(len(data.keys))
        scales[2] = 1e-4
        with pytest.raises(DomainError, match="v_min"):
            BTRewardModel(data.keys, np.zeros(len(data.keys)), scales)

    def test_scale_floor_from_settings(
        self, data: PrefDataset, monkeypatch: pytest.MonkeyPatch
    ) -> None:
        monkeypatch.setenv("ALIGN_NUMERICS_V_MIN", "0.5")
        with pytest.raises(DomainError, match="v_min=0.5"):
            BTRewardModel(data.keys, np.zeros(5), np.full(5, 0.4))

    def test_simplified_ignores_scales(self, data: PrefDataset) -> None:
        model = BTRewardModel(data.keys, np.zeros(5), np.full(5, 1e-9), simplified=True)
        assert model.scales.tolist() == [1.0] * 5

    def test_shape_mismatch(self, data: PrefDataset) -> None:
        with pytest.raises(DomainError, match="align"):
            BTRewardModel(data.keys, np.zeros(4), np.ones(5))

    def test_unknown_key(self, model: BTRewardModel) -> None:
        with pytest.raises(ContextKeyError):
            model.reward(("z", "a"))
        with pytest.raises(ContextKeyError):
            model.scale(("z", "a"))


class TestCrossEntropy:
    """Tests for ce_loss_full and ce_loss_simplified."""

    def test_single_triple_matches_win_probability(self) -> None:
        data = PrefDataset.from_triples([("x", "a", "b")])
        model = BTRewardModel(data.keys, np.array([0.8, -0.3]), np.array([1.5, 0.6]))
        p = bt_win_prob_tanh(0.8, -0.3, 1.5**2, 0.6**2)
        assert ce_loss_full(model, data).value == pytest.approx(-math.log(p), rel=1e-12)

    def test_uniform_model_is_log_two(self, data: PrefDataset) -> None:
        model = BTRewardModel.zeros(data.keys)
        assert ce_loss_full(model, data).value == pytest.approx(math.log(2))

    def test_simplified_equals_full_at_unit_scale(
        self, data: PrefDataset, model: BTRewardModel
    ) -> None:
        unit = model.with_tables(model.rewards, np.ones(len(data.keys)))
        simplified = BTRewardModel(data.keys, model.rewards, np.ones(5), simplified=True)
        full = ce_loss_full(unit, data)
        simple = ce_loss_simplified(simplified, data)
        assert simple.value == pytest.approx(full.value, abs=1e-14)
        np.testing.assert_allclose(simple.gradient[:, 0], full.gradient[:, 0], atol=1e-14)
        assert simple.columns == ("R",)
        assert full.columns == ("R", "V")

    def test_full_gradient(self, data: PrefDataset, model: BTRewardModel) -> None:
        report = ce_loss_full(model, data)
        n = len(data.keys)

        def loss(x: np.ndarray) -> float:
            return ce_loss_full(model.with_tables(x[:n], x[n:]), data).value

        numeric = finite_diff_vector(loss, np.concatenate([model.rewards, model.scales]))
        analytic = np.concatenate([report.gradient[:, 0], report.gradient[:, 1]])
        assert relative_error(analytic, numeric) < 1e-5

    def test_simplified_gradient(self, data: PrefDataset, model: BTRewardModel) -> None:
        simplified = BTRewardModel(data.keys, model.rewards, model.scales, simplified=True)
        report = ce_loss_simplified(simplified, data)
        numeric = finite_diff_vector(
            lambda r: ce_loss_simplified(simplified.with_tables(r), data).value,
            simplified.rewards,
        )
        assert relative_error(report.gradient[:, 0], numeric) < 1e-5

    def test_duplicates_weight_the_mean(self) -> None:
        once = PrefDataset.from_triples([("x", "a", "b"), ("x", "b", "a")])
        twice = PrefDataset.from_triples([("x", "a", "b"), ("x", "a", "b"), ("x", "b", "a")])
        model = BTRewardModel(once.keys, np.array([1.0, 0.0]), np.ones(2))
        p = float(bt_win_prob_tanh(1.0, 0.0, 1.0, 1.0))
        assert ce_loss_full(model, once).value == pytest.approx(
            -(math.log(p) + math.log(1 - p)) / 2
        )
        assert ce_loss_full(model, twice).value == pytest.approx(
            -(2 * math.log(p) + math.log(1 - p)) / 3
        )

    def test_empty_dataset(self, data: PrefDataset, model: BTRewardModel) -> None:
        with pytest.raises(DomainError, match="empty"):
            ce_loss_full(model, data.subset(np.array([], dtype=np.int64)))

    def test_missing_model_key(self, data: PrefDataset) -> None:
        model = BTRewardModel.zeros(data.keys[:3])
        with pytest.raises(ContextKeyError):
            ce_loss_full(model, data)


class TestSampling:
    """Tests for sample_pref_dataset."""

    @pytest.fixture
    def truth(self) -> BTGroundTruth:
        return BTGroundTruth.homoscedastic("x", {"a": 1.0, "b": 0.0, "c": -0.5})

    def test_seeded(self, truth: BTGroundTruth) -> None:
        first = sample_pref_dataset(truth, truth.all_pairs(), 50, 3)
        second = sample_pref_dataset(truth, truth.all_pairs(), 50, 3)
        assert list(first.triples) == list(second.triples)
        assert len(first) == 150

    @pytest.mark.parametrize("link", list(WinLink))
    def test_empirical_win_rate(self, truth: BTGroundTruth, link: WinLink) -> None:
        data = sample_pref_dataset(truth, [("x", "a", "b")], 20000, 11, link=link)
        expected = float(win_probability(link, 1.0, 0.0, 1.0, 1.0))
        assert data.win_rate("x", "a", "b") == pytest.approx(expected, abs=0.015)

    def test_pairing_order_is_kept(self, truth: BTGroundTruth) -> None:
        data = sample_pref_dataset(truth, [("x", "b", "c"), ("x", "a", "b")], 10, 0)
        pairs = [frozenset((yp, ym)) for _, yp, ym in data.triples]
        assert pairs == [frozenset("bc")] * 10 + [frozenset("ab")] * 10

    def test_invalid_arguments(self, truth: BTGroundTruth) -> None:
        with pytest.raises(DomainError, match="n_per_pair"):
            sample_pref_dataset(truth, truth.all_pairs(), 0, 0)
        with pytest.raises(DomainError, match="No pairs"):
            sample_pref_dataset(truth, [], 5, 0)
        with pytest.raises(ContextKeyError):
            sample_pref_dataset(truth, [("x", "a", "zz")], 5, 0)
