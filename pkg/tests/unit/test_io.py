"""Tests for CSV and JSON export."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np
import pytest

from align_lab.core.exceptions import ConfigurationError
from align_lab.core.occupancy import exact_occupancy, trajectory_distribution
from align_lab.core.policy import TabularPolicy
from align_lab.core.token_mdp import PromptDist
from align_lab.harness.io import (
    model_to_csv,
    preferences_to_csv,
    read_domains,
    read_model,
    read_preferences,
    rows_to_csv,
    table_to_csv,
    write_csv,
    write_json,
)
from align_lab.preference.bradley_terry import BTRewardModel, PrefDataset

TRIPLES = [("x", "a", "b"), ("x", "b", "c"), ("y", "p", "q")]


def _read(text: str) -> list[dict[str, str]]:
    return list(csv.DictReader(io.StringIO(text)))


class TestRowsToCsv:
    """Tests for rows_to_csv."""

    def test_first_seen_column_order(self) -> None:
        text = rows_to_csv([{"b": 1, "a": 2}, {"a": 3, "c": 4}])
        assert text.splitlines() == ["b,a,c", "1,2,", ",3,4"]

    def test_cells(self) -> None:
        text = rows_to_csv([{"x": 0.1, "ok": True, "none": None, "n": np.float64(2.5)}])
        assert text.splitlines()[1] == "0.10000000000000001,true,,2.5"

    def test_explicit_columns(self) -> None:
        assert rows_to_csv([{"a": 1, "b": 2}], ["b"]) == "b\n2\n"

    def test_no_rows(self) -> None:
        assert rows_to_csv([], ["a", "b"]) == "a,b\n"


class TestTables:
    """Tests for table_to_csv."""

    def test_trajectory_table(self, expert: TabularPolicy, prompts: PromptDist) -> None:
        dist = trajectory_distribution(expert, prompts)
        rows = _read(table_to_csv(dist.rows()))
        assert len(rows) == 15
        assert sum(float(r["mass"]) for r in rows) == pytest.approx(1.0)

    def test_occupancy_table(self, expert: TabularPolicy, prompts: PromptDist) -> None:
        occupancy = exact_occupancy(expert, prompts)
        text = table_to_csv(occupancy.rows(), value_column="rho")
        assert text.startswith("key,rho\n")
        assert len(_read(text)) == len(occupancy.rows())


class TestPreferences:
    """Tests for preference CSV export and import."""

    def test_round_trip(self, tmp_path: Path) -> None:
        data = PrefDataset.from_triples(TRIPLES)
        path = tmp_path / "prefs.csv"
        path.write_text(preferences_to_csv(data))
        assert list(read_preferences(path).triples) == TRIPLES

    def test_extra_columns_are_ignored(self, tmp_path: Path) -> None:
        path = tmp_path / "prefs.csv"
        path.write_text("id,prompt,winner,loser\n1,x,a,b\n")
        assert list(read_preferences(path).triples) == [("x", "a", "b")]

    def test_missing_file(self, tmp_path: Path) -> None:
        with pytest.raises(ConfigurationError, match="not found"):
            read_preferences(tmp_path / "none.csv")

    def test_missing_columns(self, tmp_path: Path) -> None:
        path = tmp_path / "prefs.csv"
        path.write_text("prompt,chosen,rejected\nx,a,b\n")
        with pytest.raises(ConfigurationError, match="needs columns"):
            read_preferences(path)

    def test_no_rows(self, tmp_path: Path) -> None:
        path = tmp_path / "prefs.csv"
        path.write_text("prompt,winner,loser\n")
        with pytest.raises(ConfigurationError, match="no rows"):
            read_preferences(path)


class TestDomains:
    """Tests for domain-label CSV import."""

    def test_labels(self, tmp_path: Path) -> None:
        path = tmp_path / "domains.csv"
        path.write_text("prompt,response,domain\nx,a,easy\nx,b,hard\n")
        assert read_domains(path) == {("x", "a"): "easy", ("x", "b"): "hard"}

    def test_missing_file(self, tmp_path: Path) -> None:
        with pytest.raises(ConfigurationError, match="not found"):
            read_domains(tmp_path / "none.csv")

    def test_missing_columns(self, tmp_path: Path) -> None:
        path = tmp_path / "domains.csv"
        path.write_text("prompt,response\nx,a\n")
        with pytest.raises(ConfigurationError, match="needs columns"):
            read_domains(path)


class TestModels:
    """Tests for reward-model CSV export and import."""

    def test_round_trip(self, tmp_path: Path) -> None:
        keys = (("x", "a"), ("x", "b"))
        model = BTRewardModel(keys, np.array([0.1, -0.1]), np.array([1.0 / 3.0, 3.0]))
        path = tmp_path / "model.csv"
        path.write_text(model_to_csv(model))
        loaded = read_model(path)
        assert loaded.keys == keys
        assert loaded.rewards.tolist() == model.rewards.tolist()
        assert loaded.scales.tolist() == model.scales.tolist()

    def test_header(self) -> None:
        model = BTRewardModel.zeros((("x", "a"),), simplified=True)
        assert model_to_csv(model).splitlines() == ["prompt,response,R,V", "x,a,0,1"]


class TestWriters:
    """Tests for write_csv and write_json."""

    def test_parents_are_created(self, tmp_path: Path) -> None:
        target = tmp_path / "deep" / "dir" / "rows.csv"
        write_csv(target, [{"a": 1}])
        assert target.read_text() == "a\n1\n"

    def test_json_is_sorted(self, tmp_path: Path) -> None:
        target = tmp_path / "out.json"
        write_json(target, {"b": 1, "a": Path("p")})
        text = target.read_text()
        assert text.endswith("}\n")
        assert list(json.loads(text)) == ["a", "b"]
        assert json.loads(text)["a"] == "p"
