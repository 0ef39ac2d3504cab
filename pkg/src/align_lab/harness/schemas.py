"""Pydantic schemas for experiment configs and metric reports.

An experiment config is a TOML document with the sections ``mdp``,
``expert``, ``policy``, ``training``, ``optimizer`` and ``adversarial``;
see docs/configuration.md for the full schema.
"""

from __future__ import annotations

import hashlib
import json
from enum import Enum
from pathlib import Path
from typing import Any, Literal

import tomli
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from align_lab.adversarial.discriminator import Granularity
from align_lab.adversarial.fdiv import FDivSpec, FFamily
from align_lab.adversarial.training import Schedule
from align_lab.core.exceptions import ConfigurationError, DomainError
from align_lab.core.policy import FULL, ContextOrder
from align_lab.core.token_mdp import (
    PromptDist,
    TerminalReward,
    TrajKey,
    Vocab,
    check_budget,
)
from align_lab.harness.optim import OptimizerConfig, OptimizerMethod

EXACT = "exact"


class ObjectiveKind(str, Enum):
    """Training objective of an experiment."""

    SFT = "SFT"
    WFKL = "WFKL"
    TRAJ_FKL = "TRAJ_FKL"
    EXACT_FKL = "EXACT_FKL"
    RKL_ADV = "RKL_ADV"
    JS_ADV = "JS_ADV"
    FGAN = "FGAN"

    @property
    def adversarial(self) -> bool:
        return self in (ObjectiveKind.RKL_ADV, ObjectiveKind.JS_ADV, ObjectiveKind.FGAN)


class StepScaling(str, Enum):
    """How the SFT loss is normalized: per step, or per trajectory like TRAJ_FKL."""

    NONE = "none"
    # divide by n_traj, which scales the gradient by n_steps / n_traj
    PER_TRAJECTORY = "per_trajectory"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class MDPSection(_Section):
    """Vocabulary, capacity and prompts."""

    symbols: list[str] = Field(..., min_length=1, description="Content token symbols")
    eos: str = Field(default="<eos>", description="End-of-sequence symbol")
    capacity: int = Field(..., ge=1, description="Maximum generated length C")
    prompts: list[str] = Field(
        default_factory=lambda: [""], min_length=1, description="'|'-separated prompts"
    )
    prompt_probs: list[float] | None = Field(
        default=None, description="Prompt probabilities; uniform when omitted"
    )

    @model_validator(mode="after")
    def _probs_match(self) -> MDPSection:
        if self.prompt_probs is not None and len(self.prompt_probs) != len(self.prompts):
            raise ValueError("prompt_probs needs one entry per prompt")
        return self


class TrajectoryRef(_Section):
    """A complete trajectory written as symbol strings."""

    prompt: str = ""
    response: str


class RewardEntry(TrajectoryRef):
    value: float


class ExpertSection(_Section):
    """Hidden terminal reward and Boltzmann temperature."""

    temperature: float = Field(default=1.0, gt=0)
    default_reward: float = 0.0
    rewards: list[RewardEntry] = Field(default_factory=list)
    modes: list[TrajectoryRef] = Field(
        default_factory=list, description="Trajectories whose mass is reported"
    )


class PolicySection(_Section):
    order: int | Literal["full"] = Field(default=FULL, description="Context order k or 'full'")

    @field_validator("order")
    @classmethod
    def _positive(cls, value: int | str) -> int | str:
        if isinstance(value, int) and value < 0:
            raise ValueError("order must be >= 0 or 'full'")
        return value


class TrainingSection(_Section):
    """Objective, data regime and divergence family."""

    objective: ObjectiveKind = ObjectiveKind.SFT
    granularity: Granularity = Granularity.STATE_ACTION
    dataset_size: int | Literal["exact"] = Field(default=EXACT)
    fgan_family: FFamily = FFamily.AIRL
    alpha: float = Field(default=0.5, gt=0, lt=1)
    step_scaling: StepScaling = StepScaling.NONE

    @field_validator("objective", mode="before")
    @classmethod
    def _upper(cls, value: Any) -> Any:
        return value.upper() if isinstance(value, str) else value

    @field_validator("dataset_size", mode="before")
    @classmethod
    def _size(cls, value: Any) -> Any:
        if isinstance(value, str) and value.lower() == EXACT:
            return EXACT
        if isinstance(value, str) and value.isdigit():
            value = int(value)
        if isinstance(value, int) and value < 1:
            raise ValueError("dataset_size must be >= 1 or 'exact'")
        return value


class AdversarialSection(_Section):
    """Alternating schedule; mirrors adversarial.training.Schedule."""

    disc_steps: int = Field(default=50, ge=1)
    policy_steps: int = Field(default=1, ge=1)
    rounds: int = Field(default=200, ge=1)
    disc_step_size: float = Field(default=1.0, gt=0)
    policy_step_size: float = Field(default=0.5, gt=0)
    policy_method: OptimizerMethod = OptimizerMethod.GD
    precondition: bool = True
    estimator: Literal["exact", "sampled"] = "exact"
    n_samples: int = Field(default=1000, ge=1)
    report_every: int = Field(default=10, ge=1)

    def schedule(self) -> Schedule:
        return Schedule(**self.model_dump())


class ExperimentConfig(_Section):
    """One fully specified experiment."""

    name: str = "experiment"
    seed: int = 0
    mdp: MDPSection
    expert: ExpertSection = Field(default_factory=ExpertSection)
    policy: PolicySection = Field(default_factory=PolicySection)
    training: TrainingSection = Field(default_factory=TrainingSection)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    adversarial: AdversarialSection = Field(default_factory=AdversarialSection)

    @property
    def objective(self) -> ObjectiveKind:
        return self.training.objective

    @property
    def exact_data(self) -> bool:
        return self.training.dataset_size == EXACT

    @property
    def context_order(self) -> ContextOrder:
        return self.policy.order

    def fdiv_spec(self) -> FDivSpec:
        return FDivSpec(self.training.fgan_family, self.training.alpha)

    def semantic_dict(self) -> dict[str, Any]:
        """Every field that changes results; the display name is excluded."""
        return self.model_dump(mode="json", exclude={"name"})

    def config_hash(self) -> str:
        payload = json.dumps(self.semantic_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()

    def with_overrides(self, overrides: dict[str, Any]) -> ExperimentConfig:
        """Copy with dotted-key overrides, e.g. ``{"training.objective": "RKL_ADV"}``.

        Raises:
            ConfigurationError: If a key is unknown or a value fails validation.
        """
        data = self.model_dump(mode="json")
        for dotted, value in overrides.items():
            *path, leaf = _resolve_key(dotted)
            target = data
            for part in path:
                if part not in target or not isinstance(target[part], dict):
                    raise ConfigurationError(f"Unknown config key: {dotted}")
                target = target[part]
            if leaf not in target:
                raise ConfigurationError(f"Unknown config key: {dotted}")
            target[leaf] = value
        return validate_config(data)

    def build_mdp(self) -> tuple[Vocab, PromptDist]:
        """Vocabulary and prompt distribution, checked against the enumeration budget.

        Raises:
            ConfigurationError: For unknown symbols or malformed prompts.
            EnumerationBudgetError: If the trees are too large to enumerate.
        """
        mdp = self.mdp
        try:
            vocab = Vocab.build(mdp.symbols, eos=mdp.eos)
            prompts = [vocab.encode(p) for p in mdp.prompts]
            if mdp.prompt_probs is None:
                prompt_dist = PromptDist.uniform(prompts)
            else:
                prompt_dist = PromptDist(tuple(prompts), tuple(mdp.prompt_probs))
        except DomainError as e:
            raise ConfigurationError(f"Invalid mdp section: {e.message}", e.context) from e
        check_budget(vocab, mdp.capacity, n_prompts=len(prompts))
        return vocab, prompt_dist

    def trajectory_key(self, vocab: Vocab, ref: TrajectoryRef) -> TrajKey:
        try:
            return vocab.encode(ref.prompt), vocab.encode(ref.response)
        except DomainError as e:
            raise ConfigurationError(f"Invalid trajectory {ref}: {e.message}") from e

    def hidden_reward(self, vocab: Vocab, prompt_dist: PromptDist) -> TerminalReward:
        rewards = {self.trajectory_key(vocab, r): r.value for r in self.expert.rewards}
        try:
            return TerminalReward.build(
                vocab,
                prompt_dist,
                self.mdp.capacity,
                rewards,
                default=self.expert.default_reward,
            )
        except DomainError as e:
            raise ConfigurationError(f"Invalid expert rewards: {e.message}", e.context) from e


_SECTION_ALIASES = {
    "objective": "training.objective",
    "granularity": "training.granularity",
    "dataset_size": "training.dataset_size",
    "order": "policy.order",
    "capacity": "mdp.capacity",
    "temperature": "expert.temperature",
    "tau": "expert.temperature",
    "step_size": "optimizer.step_size",
    "rounds": "adversarial.rounds",
}


def _resolve_key(key: str) -> list[str]:
    return _SECTION_ALIASES.get(key, key).split(".")


def _format_validation_error(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        loc = ".".join(str(p) for p in item["loc"])
        parts.append(f"{loc}: {item['msg']}")
    return "; ".join(parts)


def validate_config(data: dict[str, Any]) -> ExperimentConfig:
    """Validate a raw mapping into an ExperimentConfig.

    Raises:
        ConfigurationError: With one line per validation failure.
    """
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigurationError(
            f"Invalid experiment config: {_format_validation_error(e)}"
        ) from e


def load_experiment_config(path: Path) -> ExperimentConfig:
    """Read and validate a TOML experiment config.

    Raises:
        ConfigurationError: If the file is missing, not TOML, or invalid.
    """
    try:
        with path.open("rb") as f:
            data = tomli.load(f)
    except FileNotFoundError as e:
        raise ConfigurationError(f"Config file not found: {path}") from e
    except tomli.TOMLDecodeError as e:
        raise ConfigurationError(f"Config file is not valid TOML: {path}: {e}") from e
    return validate_config(data)


class RoundMetrics(BaseModel):
    """Metrics recorded at one round (adversarial) or report interval (direct)."""

    model_config = ConfigDict(frozen=True)

    round: int
    loss: float
    adversary_loss: float | None = None
    fkl: float = Field(..., ge=0)
    rkl: float = Field(..., ge=0)
    js: float = Field(..., ge=0)
    disc_gap: float | None = None


class MetricsReport(BaseModel):
    """Everything one experiment run reports."""

    model_config = ConfigDict(frozen=True)

    name: str
    objective: str
    seed: int
    config_hash: str
    fkl: float = Field(..., ge=0)
    rkl: float = Field(..., ge=0)
    js: float = Field(..., ge=0)
    mode_mass: list[float] = Field(default_factory=list)
    expected_reward: float
    disc_gap: float | None = None
    converged: bool
    iterations: int
    wall_clock_s: float = 0.0
    history: list[RoundMetrics] = Field(default_factory=list)

    @field_validator("mode_mass")
    @classmethod
    def _unit_interval(cls, value: list[float]) -> list[float]:
        if any(not -1e-12 <= m <= 1 + 1e-12 for m in value):
            raise ValueError("mode masses must lie in [0, 1]")
        return value

    def to_json(self, include_timing: bool = True) -> str:
        exclude = None if include_timing else {"wall_clock_s"}
        return json.dumps(self.model_dump(mode="json", exclude=exclude), indent=2, sort_keys=True)

    def summary_row(self) -> dict[str, Any]:
        """Flat row for sweep CSVs."""
        row: dict[str, Any] = {
            "name": self.name,
            "objective": self.objective,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "fkl": self.fkl,
            "rkl": self.rkl,
            "js": self.js,
            "expected_reward": self.expected_reward,
            "disc_gap": self.disc_gap,
            "converged": self.converged,
            "iterations": self.iterations,
        }
        for i, mass in enumerate(self.mode_mass):
            row[f"mode_{i}"] = mass
        return row
