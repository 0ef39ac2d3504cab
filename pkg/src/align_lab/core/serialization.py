"""Structured text format for tabular parameters.

A file is a ``key = value`` header, a ``---`` separator, then one row per
table key: the canonical key string, a tab, and the row's reals written
with 17 significant digits so that a load reproduces the floats exactly.
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping, Sequence
from pathlib import Path

import numpy as np

from align_lab.core.exceptions import ConfigurationError, DomainError
from align_lab.core.policy import FULL, ContextKey, ContextOrder, TabularPolicy
from align_lab.core.token_mdp import Vocab

SEPARATOR = "---"


def format_real(value: float) -> str:
    return format(float(value), ".17g")


def dump_table(
    header: Mapping[str, object],
    rows: Iterable[tuple[str, Sequence[float]]],
) -> str:
    lines = [f"{name} = {value}" for name, value in header.items()]
    lines.append(SEPARATOR)
    lines.extend(f"{key}\t{' '.join(format_real(v) for v in values)}" for key, values in rows)
    return "\n".join(lines) + "\n"


def load_table(text: str) -> tuple[dict[str, str], list[tuple[str, np.ndarray]]]:
    """Parse a file written by ``dump_table``.

    Raises:
        ConfigurationError: If the header separator is missing or a row is malformed.
    """
    head, sep, body = text.partition(f"\n{SEPARATOR}\n")
    if not sep:
        raise ConfigurationError("Missing header separator in table file")
    header: dict[str, str] = {}
    for line in head.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        name, eq, value = line.partition("=")
        if not eq:
            raise ConfigurationError(f"Malformed header line: {line!r}")
        header[name.strip()] = value.strip()
    rows: list[tuple[str, np.ndarray]] = []
    for line in body.splitlines():
        if not line.strip():
            continue
        key, tab, values = line.partition("\t")
        if not tab:
            raise ConfigurationError(f"Malformed row: {line!r}")
        rows.append((key, np.array([float(v) for v in values.split()], dtype=np.float64)))
    return header, rows


def dump_policy(policy: TabularPolicy) -> str:
    header = {
        "kind": "policy",
        "vocab_hash": policy.vocab.digest(),
        "context_order": policy.context_order,
        "capacity": policy.capacity,
    }
    return dump_table(header, ((str(key), policy.logits[key]) for key in policy.keys))


def load_policy(text: str, vocab: Vocab) -> TabularPolicy:
    """Rebuild a policy, checking it was written for the same vocabulary.

    Raises:
        ConfigurationError: On a vocabulary hash mismatch or malformed file.
    """
    header, rows = load_table(text)
    if header.get("vocab_hash") != vocab.digest():
        raise ConfigurationError(
            "Policy file was written for a different vocabulary",
            {"expected": vocab.digest(), "found": header.get("vocab_hash")},
        )
    raw_order = header.get("context_order", FULL)
    order: ContextOrder = FULL if raw_order == FULL else int(raw_order)
    try:
        logits = {ContextKey.parse(key): values for key, values in rows}
        return TabularPolicy(vocab, int(header["capacity"]), order, logits)
    except (KeyError, DomainError) as exc:
        raise ConfigurationError(f"Invalid policy file: {exc}") from exc


def save_policy(policy: TabularPolicy, path: Path) -> None:
    path.write_text(dump_policy(policy), encoding="utf-8")


def read_policy(path: Path, vocab: Vocab) -> TabularPolicy:
    return load_policy(path.read_text(encoding="utf-8"), vocab)
