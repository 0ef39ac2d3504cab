"""CSV and JSON export of tables, histories, preference data and reports."""

from __future__ import annotations

import csv
import io
import json
from collections.abc import Iterable, Mapping, Sequence
from pathlib import Path
from typing import Any

import numpy as np

from align_lab.core.exceptions import ConfigurationError
from align_lab.core.serialization import format_real
from align_lab.preference.bradley_terry import BTRewardModel, PrefDataset, PrefKey

PREFERENCE_HEADER = ("prompt", "winner", "loser")
MODEL_HEADER = ("prompt", "response", "R", "V")
DOMAIN_HEADER = ("prompt", "response", "domain")


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float | np.floating):
        return format_real(float(value))
    return str(value)


def rows_to_csv(rows: Sequence[Mapping[str, Any]], columns: Sequence[str] | None = None) -> str:
    """Render dict rows as CSV; columns default to first-seen key order."""
    if columns is None:
        seen: dict[str, None] = {}
        for row in rows:
            seen.update(dict.fromkeys(row))
        columns = list(seen)
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(row.get(c)) for c in columns])
    return buffer.getvalue()


def write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def write_csv(path: Path, rows: Sequence[Mapping[str, Any]]) -> None:
    write_text(path, rows_to_csv(rows))


def write_json(path: Path, data: Any) -> None:
    write_text(path, json.dumps(data, indent=2, sort_keys=True, default=str) + "\n")


def table_to_csv(rows: Iterable[tuple[str, float]], value_column: str = "mass") -> str:
    """Two-column CSV of canonical key strings and values (occupancy or trajectory tables)."""
    return rows_to_csv([{"key": k, value_column: v} for k, v in rows], ["key", value_column])


def preferences_to_csv(data: PrefDataset) -> str:
    return rows_to_csv(
        [dict(zip(PREFERENCE_HEADER, t, strict=True)) for t in data.triples],
        PREFERENCE_HEADER,
    )


def read_preferences(path: Path) -> PrefDataset:
    """Load a (prompt, winner, loser) CSV.

    Raises:
        ConfigurationError: If the file is missing or lacks the expected columns.
    """
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as e:
        raise ConfigurationError(f"Preference file not found: {path}") from e
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or not set(PREFERENCE_HEADER) <= set(reader.fieldnames):
        raise ConfigurationError(
            f"Preference CSV needs columns {', '.join(PREFERENCE_HEADER)}: {path}"
        )
    triples = [(row["prompt"], row["winner"], row["loser"]) for row in reader]
    if not triples:
        raise ConfigurationError(f"Preference file has no rows: {path}")
    return PrefDataset.from_triples(triples)


def read_domains(path: Path) -> dict[PrefKey, str]:
    """Load a (prompt, response, domain) CSV of domain labels.

    Raises:
        ConfigurationError: If the file is missing or lacks the expected columns.
    """
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as e:
        raise ConfigurationError(f"Domain file not found: {path}") from e
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or not set(DOMAIN_HEADER) <= set(reader.fieldnames):
        raise ConfigurationError(f"Domain CSV needs columns {', '.join(DOMAIN_HEADER)}: {path}")
    return {(row["prompt"], row["response"]): row["domain"] for row in reader}


def model_to_csv(model: BTRewardModel) -> str:
    return rows_to_csv(
        [
            {"prompt": x, "response": y, "R": r, "V": v}
            for (x, y), r, v in model.rows()
        ],
        MODEL_HEADER,
    )


def read_model(path: Path, simplified: bool = False) -> BTRewardModel:
    reader = csv.DictReader(io.StringIO(path.read_text(encoding="utf-8")))
    rows = list(reader)
    keys = tuple((row["prompt"], row["response"]) for row in rows)
    rewards = np.array([float(row["R"]) for row in rows])
    scales = np.array([float(row["V"]) for row in rows])
    return BTRewardModel(keys, rewards, scales, simplified)
