"""Logging setup for experiments.

Console output always; an optional rotating file log, plain or
JSON-structured. Training loops attach ``experiment``, ``round``,
``objective``, ``iteration``, ``context`` and ``metrics`` as extras, which
the JSON formatter copies into each record.
"""

from __future__ import annotations

import json
import logging
from datetime import datetime
from logging.handlers import RotatingFileHandler
from typing import TYPE_CHECKING, Any

from align_lab.config import get_settings

if TYPE_CHECKING:
    from pathlib import Path

# Root logger of the package
logger = logging.getLogger("align_lab")

EXTRA_FIELDS = ("experiment", "round", "objective", "iteration", "context", "metrics")

_logging_configured = False


class JSONFormatter(logging.Formatter):
    """Formatter that outputs JSON-structured log records."""

    def format(self, record: logging.LogRecord) -> str:
        log_data: dict[str, Any] = {
            "timestamp": datetime.fromtimestamp(record.created).isoformat(),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
        }

        if record.exc_info:
            log_data["exception"] = self.formatException(record.exc_info)

        for key in EXTRA_FIELDS:
            if hasattr(record, key):
                log_data[key] = getattr(record, key)

        return json.dumps(log_data, default=str)


def setup_logging(
    log_level: str | None = None,
    log_dir: Path | None = None,
    json_format: bool | None = None,
    file_logging: bool | None = None,
    force: bool = False,
) -> None:
    """Configure the ``align_lab`` logger once per process.

    Arguments left as None fall back to the ``lab`` settings section.

    Args:
        log_level: The logging level (DEBUG, INFO, WARNING, ERROR).
        log_dir: Directory for log files.
        json_format: Use JSON format for file logs.
        file_logging: Also write a rotating log file.
        force: Reconfigure even if logging was already set up.
    """
    global _logging_configured

    if _logging_configured and not force:
        return

    settings = get_settings().lab
    level_name = (log_level or settings.log_level).upper()
    level = getattr(logging, level_name, logging.INFO)
    use_json = settings.json_logs if json_format is None else json_format
    use_file = settings.file_logging if file_logging is None else file_logging

    logger.setLevel(level)
    logger.handlers.clear()
    logger.propagate = False

    console_handler = logging.StreamHandler()
    console_handler.setLevel(level)
    console_handler.setFormatter(
        logging.Formatter("%(asctime)s [%(levelname)s] %(name)s: %(message)s", datefmt="%H:%M:%S")
    )
    logger.addHandler(console_handler)

    if use_file:
        log_directory = log_dir or settings.log_dir
        log_directory.mkdir(parents=True, exist_ok=True)
        file_handler = RotatingFileHandler(
            log_directory / "align-lab.log",
            maxBytes=10 * 1024 * 1024,  # 10 MB
            backupCount=5,
        )
        file_handler.setLevel(logging.DEBUG)
        if use_json:
            file_handler.setFormatter(JSONFormatter())
        else:
            file_handler.setFormatter(
                logging.Formatter(
                    "%(asctime)s [%(levelname)s] %(name)s: %(message)s",
                    datefmt="%Y-%m-%d %H:%M:%S",
                )
            )
        logger.addHandler(file_handler)

    _logging_configured = True
    logger.debug("Logging configured", extra={"context": {"level": level_name, "file": use_file}})
