"""Wall-clock timing for experiment runs."""

from __future__ import annotations

import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

if TYPE_CHECKING:
    from collections.abc import Iterator


@dataclass
class TimingRecord:
    """Record of a single timed operation."""

    name: str
    duration_s: float
    metadata: dict[str, Any] = field(default_factory=dict)


class Timer:
    """Context manager for timing operations."""

    def __init__(self, name: str = "operation") -> None:
        self.name = name
        self.start_time: float = 0
        self.end_time: float = 0
        self.duration_s: float = 0
        self._metadata: dict[str, Any] = {}

    def __enter__(self) -> Timer:
        self.start_time = time.perf_counter()
        return self

    def __exit__(self, *args: object) -> None:
        self.end_time = time.perf_counter()
        self.duration_s = self.end_time - self.start_time

    @property
    def duration_ms(self) -> float:
        return self.duration_s * 1000

    def add_metadata(self, key: str, value: Any) -> None:
        self._metadata[key] = value

    def to_record(self) -> TimingRecord:
        return TimingRecord(self.name, self.duration_s, dict(self._metadata))


@contextmanager
def timed_operation(name: str) -> Iterator[Timer]:
    """Time a block.

    Example:
        with timed_operation("fit") as timer:
            model, report = fit_reward_model(data)
            timer.add_metadata("converged", report.converged)
    """
    timer = Timer(name)
    with timer:
        yield timer
