"""Loss value plus gradient, the currency of every objective."""

from __future__ import annotations

import json
import math
from collections.abc import Hashable, Iterator, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from align_lab.core.exceptions import NumericAbortError


def _label(item: Hashable) -> str:
    return str(item) if not isinstance(item, tuple) else "|".join(_label(i) for i in item)


@dataclass(frozen=True, eq=False)
class LossReport:
    """A scalar loss and its gradient table.

    ``gradient`` is either a vector over ``rows`` or a (rows, columns)
    matrix; for policy losses rows are context keys and columns are action
    token ids.
    """

    value: float
    gradient: np.ndarray
    rows: Sequence[Hashable]
    columns: Sequence[Hashable] = ()
    clamped: int = 0
    extras: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        expected = (len(self.rows), len(self.columns)) if self.columns else (len(self.rows),)
        if self.gradient.shape != expected:
            raise ValueError(f"Gradient shape {self.gradient.shape} != {expected}")

    @property
    def is_finite(self) -> bool:
        return math.isfinite(self.value) and bool(np.all(np.isfinite(self.gradient)))

    def check_finite(self, iteration: int | None = None) -> LossReport:
        """Return self, or raise NumericAbortError if anything is non-finite."""
        if not self.is_finite:
            raise NumericAbortError(f"Non-finite loss {self.value}", iteration=iteration)
        return self

    def flat(self) -> np.ndarray:
        return self.gradient.ravel()

    def items(self) -> Iterator[tuple[Hashable, float]]:
        """(key, gradient) pairs; keys are (row, column) for matrix gradients."""
        if self.columns:
            for i, row in enumerate(self.rows):
                for j, col in enumerate(self.columns):
                    yield (row, col), float(self.gradient[i, j])
        else:
            for i, row in enumerate(self.rows):
                yield row, float(self.gradient[i])

    def as_mapping(self) -> dict[Hashable, float]:
        return dict(self.items())

    def to_dict(self, sparse: bool = True) -> dict[str, Any]:
        grad = {_label(k): v for k, v in self.items() if not sparse or v != 0.0}
        data: dict[str, Any] = {"value": self.value, "gradient": grad}
        if self.clamped:
            data["clamped"] = self.clamped
        if self.extras:
            data["extras"] = dict(self.extras)
        return data

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of the angle between two flattened gradients (1.0 if both vanish)."""
    x, y = np.ravel(a), np.ravel(b)
    nx, ny = float(np.linalg.norm(x)), float(np.linalg.norm(y))
    if nx == 0.0 and ny == 0.0:
        return 1.0
    if nx == 0.0 or ny == 0.0:
        return 0.0
    return float(np.dot(x, y) / (nx * ny))
