"""Validation of command-line inputs: sweep axes and file paths."""

from __future__ import annotations

import re
from pathlib import Path

from align_lab.core.exceptions import ConfigurationError

# Dotted config key: section.field or a top-level alias such as ``seed``
AXIS_KEY_PATTERN = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*(\.[A-Za-z_][A-Za-z0-9_]*)*$")

CONFIG_SUFFIXES = {".toml"}
MAX_AXIS_VALUES = 1000

AxisValue = int | float | bool | str


def parse_scalar(text: str) -> AxisValue:
    """Read an axis value as int, float or bool, falling back to the raw string."""
    text = text.strip()
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def parse_axis(spec: str) -> tuple[str, list[AxisValue]]:
    """Parse ``KEY=V1,V2,...`` into the key and its typed values.

    Args:
        spec: The axis as given on the command line.

    Returns:
        The dotted key and the values in the order given.

    Raises:
        ConfigurationError: If the key is malformed, values are missing or repeated.
    """
    key, sep, raw = spec.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigurationError(f"Axis must look like KEY=V1,V2,...; got {spec!r}")
    if not AXIS_KEY_PATTERN.match(key):
        raise ConfigurationError(f"Invalid axis key: {key!r}")

    items = [v for v in (part.strip() for part in raw.split(",")) if v]
    if not items:
        raise ConfigurationError(f"Axis {key!r} has no values")
    if len(items) > MAX_AXIS_VALUES:
        raise ConfigurationError(f"Axis {key!r} has more than {MAX_AXIS_VALUES} values")
    if len(set(items)) != len(items):
        raise ConfigurationError(f"Axis {key!r} repeats a value")
    return key, [parse_scalar(v) for v in items]


def _checked(path: str | Path) -> Path:
    if not str(path):
        raise ConfigurationError("Path cannot be empty")
    if "\x00" in str(path):
        raise ConfigurationError("Path contains null bytes")
    return Path(path).expanduser().resolve()


def validate_config_path(path: str | Path) -> Path:
    """An existing TOML file.

    Raises:
        ConfigurationError: If the path is missing, not a file, or not ``.toml``.
    """
    path_obj = _checked(path)
    if not path_obj.exists():
        raise ConfigurationError(f"Config file not found: {path_obj}")
    if not path_obj.is_file():
        raise ConfigurationError(f"Config path is not a file: {path_obj}")
    if path_obj.suffix.lower() not in CONFIG_SUFFIXES:
        raise ConfigurationError(f"Config file must be TOML: {path_obj}")
    return path_obj


def validate_output_path(path: str | Path) -> Path:
    """A writable file location; the parent directory is created on write.

    Raises:
        ConfigurationError: If the path names an existing directory.
    """
    path_obj = _checked(path)
    if path_obj.is_dir():
        raise ConfigurationError(f"Output path is a directory: {path_obj}")
    return path_obj
