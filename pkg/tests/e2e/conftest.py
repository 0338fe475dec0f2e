import csv
import json
import typing as t
from pathlib import Path

import pytest

ConfigWriter = t.Callable[[t.Dict[str, t.Any]], Path]

SCALAR_SYSTEM = {"A": [[-0.5]], "B": [[0.3]], "h": 0.5, "alpha": 0.75, "T": 1.0}


@pytest.fixture
def write_config(tmp_path: Path) -> ConfigWriter:
    """Return a function writing a configuration file into a temporary directory."""

    def writer(document: t.Dict[str, t.Any]) -> Path:
        path = tmp_path / "config.json"
        path.write_text(json.dumps(document))
        return path

    return writer


@pytest.fixture
def out_dir(tmp_path: Path) -> Path:
    """Output directory of the command, created by the command itself."""
    return tmp_path / "out"


def read_csv(path: Path) -> t.List[t.Dict[str, float]]:
    with path.open(newline="") as f:
        return [{key: float(value) for key, value in row.items()} for row in csv.DictReader(f)]


def read_report(out_dir: Path) -> t.Dict[str, t.Any]:
    return t.cast(t.Dict[str, t.Any], json.loads((out_dir / "report.json").read_text()))
