"""Custom exceptions for align-lab.

This module defines the exception hierarchy used across the package.
All exceptions inherit from LabError and carry an optional context
dictionary so callers (the experiment runner, the CLI) can attach the
config hash or objective kind before re-raising.
"""

from __future__ import annotations

from typing import Any


class LabError(Exception):
    """Base exception for align-lab errors."""

    def __init__(self, message: str, context: dict[str, Any] | None = None) -> None:
        """Initialize the exception.

        Args:
            message: The error message.
            context: Optional additional context about the error.
        """
        super().__init__(message)
        self.message = message
        self.context = context or {}

    def with_context(self, **context: Any) -> LabError:
        """Attach additional context and return self for re-raising."""
        self.context.update(context)
        return self


class ConfigurationError(LabError):
    """Experiment or settings configuration is invalid."""

    pass


class DomainError(LabError, ValueError):
    """An argument lies outside the domain of an operation.

    Raised for invalid token ids, malformed states or trajectories,
    conjugate arguments outside dom(f*), and empty datasets.
    """

    pass


class SupportMismatchError(DomainError):
    """Two distributions do not share the support an operation needs."""

    def __init__(self, message: str, key: object | None = None) -> None:
        """Initialize the exception.

        Args:
            message: The error message.
            key: The first offending table key, if known.
        """
        self.key = key
        super().__init__(message, {"key": repr(key) if key is not None else None})


class EnumerationBudgetError(LabError):
    """Exact enumeration would exceed the configured trajectory budget."""

    def __init__(self, count: int, budget: int) -> None:
        """Initialize the exception.

        Args:
            count: Number of trajectories the enumeration would produce.
            budget: The configured budget.
        """
        self.count = count
        self.budget = budget
        super().__init__(
            f"Enumeration of {count} trajectories exceeds budget {budget}",
            {"count": count, "budget": budget},
        )


class ContextKeyError(LabError, KeyError):
    """A policy context key or table key is missing."""

    def __init__(self, key: object, where: str = "policy") -> None:
        """Initialize the exception.

        Args:
            key: The missing key.
            where: Which table was searched.
        """
        self.key = key
        super().__init__(f"Missing {where} key: {key}", {"key": str(key), "where": where})

    def __str__(self) -> str:
        return self.message


class NumericAbortError(LabError):
    """A loss or metric became non-finite during optimization."""

    def __init__(
        self,
        message: str,
        iteration: int | None = None,
        round_index: int | None = None,
    ) -> None:
        """Initialize the exception.

        Args:
            message: The error message.
            iteration: Optimizer iteration at which the abort happened.
            round_index: Adversarial round at which the abort happened.
        """
        self.iteration = iteration
        self.round_index = round_index
        super().__init__(message, {"iteration": iteration, "round": round_index})
