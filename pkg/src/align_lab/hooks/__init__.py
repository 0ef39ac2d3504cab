"""Logging and timing hooks."""

from align_lab.hooks.logging import JSONFormatter, setup_logging
from align_lab.hooks.performance import Timer, TimingRecord, timed_operation

__all__ = ["JSONFormatter", "Timer", "TimingRecord", "setup_logging", "timed_operation"]
