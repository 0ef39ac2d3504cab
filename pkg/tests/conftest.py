"""Pytest configuration and fixtures."""

from __future__ import annotations

from collections.abc import Iterator

import numpy as np
import pytest

from align_lab.config import get_settings
from align_lab.core.policy import ExpertSpec, TabularPolicy, boltzmann_expert
from align_lab.core.token_mdp import PromptDist, TerminalReward, Vocab
from align_lab.harness.checks import random_policy


@pytest.fixture(autouse=True)
def fresh_settings(monkeypatch: pytest.MonkeyPatch) -> Iterator[None]:
    """Drop cached settings around every test so env overrides take effect."""
    for name in ("ALIGN_LAB_LOG_LEVEL", "ALIGN_NUMERICS_ENUMERATION_BUDGET"):
        monkeypatch.delenv(name, raising=False)
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def vocab() -> Vocab:
    """V=3 actions: a, b and <eos> (plus the mask token)."""
    return Vocab.build(["a", "b"])


@pytest.fixture
def prompts() -> PromptDist:
    return PromptDist.single()


@pytest.fixture
def two_prompts() -> PromptDist:
    """Prompts ``a`` and ``b`` with unequal weights."""
    return PromptDist(((0,), (1,)), (0.3, 0.7))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def expert(vocab: Vocab, prompts: PromptDist) -> TabularPolicy:
    """Boltzmann expert over C=3 with two rewarded responses."""
    reward = TerminalReward.build(
        vocab,
        prompts,
        3,
        {((), (0, 1, 2)): 2.0, ((), (1, 2)): 1.0},
    )
    return boltzmann_expert(ExpertSpec(reward, 1.0), vocab, prompts, 3)


@pytest.fixture
def policy(vocab: Vocab, prompts: PromptDist, rng: np.random.Generator) -> TabularPolicy:
    """Random FULL-context policy over C=3."""
    return random_policy(vocab, 3, "full", prompts, rng)
