"""Tests for f-divergence generators and conjugates."""

from __future__ import annotations

import math

import numpy as np
import pytest

from align_lab.adversarial.fdiv import FDivSpec, FFamily, f_conjugate, numeric_conjugate
from align_lab.core.exceptions import DomainError
from align_lab.core.occupancy import DivergenceKind, divergence

SPECS = [
    FDivSpec(FFamily.AIRL),
    FDivSpec(FFamily.GAIL),
    FDivSpec(FFamily.FAIRL),
    FDivSpec(FFamily.ALPHA, 0.5),
    FDivSpec(FFamily.ALPHA, 0.25),
]

POINTS = {
    FFamily.AIRL: [-3.0, -1.0, -0.3],
    FFamily.GAIL: [-2.0, 0.0, 0.5],
    FFamily.FAIRL: [-2.0, 0.0, 2.0],
    FFamily.ALPHA: [-2.0, 0.0, 1.5],
}

P = {"x": 0.5, "y": 0.3, "z": 0.2}
Q = {"x": 0.2, "y": 0.4, "z": 0.4}


class TestGenerators:
    """Tests for f, f' and their boundary values."""

    @pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.name)
    def test_f_vanishes_at_one(self, spec: FDivSpec) -> None:
        assert float(spec.f(np.array(1.0))) == pytest.approx(0.0, abs=1e-15)

    @pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.name)
    def test_f_prime_matches_difference_quotient(self, spec: FDivSpec) -> None:
        u = np.array([0.3, 1.0, 4.0])
        h = 1e-6
        numeric = (spec.f(u + h) - spec.f(u - h)) / (2 * h)
        np.testing.assert_allclose(spec.f_prime(u), numeric, rtol=1e-6)

    def test_fairl_is_forward_kl(self) -> None:
        assert divergence(P, Q, FDivSpec(FFamily.FAIRL)) == pytest.approx(
            divergence(P, Q, DivergenceKind.FKL), abs=1e-14
        )

    def test_airl_is_reverse_kl(self) -> None:
        assert divergence(P, Q, FDivSpec(FFamily.AIRL)) == pytest.approx(
            divergence(P, Q, DivergenceKind.RKL), abs=1e-14
        )

    def test_gail_is_twice_js(self) -> None:
        assert divergence(P, Q, FDivSpec(FFamily.GAIL)) == pytest.approx(
            2 * divergence(P, Q, DivergenceKind.JS), abs=1e-14
        )

    def test_boundary_values(self) -> None:
        """Disjoint supports use f(0) and the slope at infinity."""
        gail = FDivSpec(FFamily.GAIL)
        assert divergence({"a": 1.0}, {"b": 1.0}, gail) == pytest.approx(2 * math.log(2))
        alpha = FDivSpec(FFamily.ALPHA, 0.5)
        assert divergence({"a": 1.0}, {"b": 1.0}, alpha) == pytest.approx(4.0)

    def test_alpha_range(self) -> None:
        with pytest.raises(DomainError, match="alpha"):
            FDivSpec(FFamily.ALPHA, 1.0)

    def test_family_from_string(self) -> None:
        assert FDivSpec("gail").family is FFamily.GAIL  # type: ignore[arg-type]
        assert FDivSpec(FFamily.ALPHA, 0.5).name == "alpha(0.5)"


class TestConjugates:
    """Tests for closed-form conjugates against numeric suprema."""

    @pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.name)
    def test_closed_form_matches_numeric(self, spec: FDivSpec) -> None:
        for t in POINTS[spec.family]:
            closed = f_conjugate(spec, t)
            assert closed == pytest.approx(numeric_conjugate(spec, t), rel=1e-6, abs=1e-9)

    @pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.name)
    def test_f_star_prime_inverts_f_prime(self, spec: FDivSpec) -> None:
        t = np.array(POINTS[spec.family])
        np.testing.assert_allclose(spec.f_prime(spec.f_star_prime(t)), t, atol=1e-10)

    @pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.name)
    def test_fenchel_young_equality(self, spec: FDivSpec) -> None:
        """f*(f'(u)) = u f'(u) - f(u)."""
        u = np.array([0.2, 1.0, 3.0])
        slope = spec.f_prime(u)
        np.testing.assert_allclose(spec.f_star(slope), u * slope - spec.f(u), atol=1e-12)

    @pytest.mark.parametrize(
        ("spec", "t"),
        [
            (FDivSpec(FFamily.AIRL), 0.0),
            (FDivSpec(FFamily.AIRL), 0.5),
            (FDivSpec(FFamily.GAIL), 1.0),
            (FDivSpec(FFamily.ALPHA, 0.5), 2.0),
            (FDivSpec(FFamily.FAIRL), math.inf),
            (FDivSpec(FFamily.FAIRL), math.nan),
        ],
    )
    def test_outside_domain(self, spec: FDivSpec, t: float) -> None:
        with pytest.raises(DomainError, match="outside dom"):
            f_conjugate(spec, t)

    def test_domains(self) -> None:
        assert FDivSpec(FFamily.AIRL).conjugate_domain == (-math.inf, 0.0)
        assert FDivSpec(FFamily.ALPHA, 0.25).conjugate_domain == (-math.inf, 4.0)
        assert FDivSpec(FFamily.FAIRL).conjugate_domain[1] == math.inf


class TestClamp:
    """Tests for FDivSpec.clamp."""

    def test_bounded_domain(self) -> None:
        values, count = FDivSpec(FFamily.AIRL).clamp(np.array([5.0, -0.5, -100.0]))
        assert count == 2
        assert values[0] == pytest.approx(-1e-6)
        assert values[1] == -0.5
        assert values[2] == -30.0

    def test_unbounded_domain_uses_logit_clamp(self) -> None:
        values, count = FDivSpec(FFamily.FAIRL).clamp(np.array([50.0, 1.0]))
        assert count == 1
        assert values.tolist() == [30.0, 1.0]

    def test_margin_from_settings(self, monkeypatch: pytest.MonkeyPatch) -> None:
        monkeypatch.setenv("ALIGN_NUMERICS_CONJUGATE_MARGIN", "0.01")
        values, _ = FDivSpec(FFamily.GAIL).clamp(np.array([1.0]))
        assert values[0] == pytest.approx(math.log(2) - 0.01)
