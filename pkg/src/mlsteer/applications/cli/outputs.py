"""Files emitted by the command line application.

Every command produces a `report.json`, a `config.json` holding the validated
configuration it ran with and, with the csv format, one CSV file per table.
CSV files have a header row, `t` (or the table key) as first column and values
written with 17 significant digits.
"""
import csv
import hashlib
import io
import logging
import typing as t
from dataclasses import dataclass, field

import numpy as np

from mlsteer.adapters.codecs import json
from mlsteer.domain.gateways import OutputStorage

logger = logging.getLogger(__name__)

REPORT_SCHEMA = "mlsteer/1"
REPORT_FILE = "report.json"
CONFIG_FILE = "config.json"

OutputFormat = t.Literal["csv", "json"]


@dataclass
class Table:
    """Tabular result."""

    name: str
    """File stem of the CSV file."""

    columns: t.List[str]
    """Column names, first column first."""

    rows: np.ndarray
    """Values with shape (rows, len(columns))."""


@dataclass
class CommandOutput:
    """Results of a command before emission."""

    command: str
    results: t.Dict[str, t.Any]
    tables: t.List[Table] = field(default_factory=list)
    diagnostics: t.List[str] = field(default_factory=list)


@dataclass
class RunReport:
    """Summary of an executed command."""

    command: str
    """Command name."""

    inputs_digest: str
    """sha256 of the canonical command, configuration and seed."""

    outputs: t.List[str]
    """Names of every emitted file, relative to the output directory."""

    diagnostics: t.List[str]
    """Warnings collected while running the command."""

    timing: t.Dict[str, float] = field(default_factory=dict)
    """Wall-clock seconds per phase. Logged only, never written to files."""


def inputs_digest(command: str, config: t.Any, seed: int) -> str:
    """Content hash of everything a command output depends on."""
    canonical = json.dumps(
        {"command": command, "config": config, "seed": seed}, indent=False
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def format_value(value: float) -> str:
    return format(float(value), ".17g")


def csv_bytes(table: Table) -> bytes:
    """Encode a table as CSV. An empty table yields the header row only."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(table.columns)
    rows = np.asarray(table.rows, dtype=float).reshape(-1, len(table.columns))
    for row in rows:
        writer.writerow([format_value(value) for value in row])
    return buffer.getvalue().encode("utf-8")


def _embedded(table: Table) -> t.Dict[str, t.Any]:
    return {"columns": table.columns, "rows": np.asarray(table.rows, dtype=float)}


def emit_outputs(
    output: CommandOutput,
    storage: OutputStorage,
    digest: str,
    fmt: OutputFormat = "csv",
    config: t.Optional[t.Dict[str, t.Any]] = None,
) -> RunReport:
    """Write the tables, the configuration and the report of a command into the output storage.

    With the json format, tables are embedded into the report under `tables`
    instead of being written as CSV files. The configuration is written to
    `config.json` when given.

    Raises:
        OSError: when a file cannot be written
    """
    written: t.List[str] = []
    results = dict(output.results)
    if fmt == "csv":
        for table in output.tables:
            name = f"{table.name}.csv"
            storage.write_bytes(name, content=csv_bytes(table), create_parents=True)
            logger.info(f"Wrote {storage.get_path(name).as_posix()}")
            written.append(name)
    else:
        results["tables"] = {table.name: _embedded(table) for table in output.tables}
    if config is not None:
        storage.write_bytes(CONFIG_FILE, content=json.dump(config), create_parents=True)
        logger.info(f"Wrote {storage.get_path(CONFIG_FILE).as_posix()}")
        written.append(CONFIG_FILE)
    written.append(REPORT_FILE)
    report = RunReport(
        command=output.command,
        inputs_digest=digest,
        outputs=written,
        diagnostics=list(output.diagnostics),
    )
    document = {
        "schema": REPORT_SCHEMA,
        "command": report.command,
        "inputs_digest": report.inputs_digest,
        "results": results,
        "diagnostics": report.diagnostics,
        "outputs": report.outputs,
    }
    storage.write_bytes(REPORT_FILE, content=json.dump(document), create_parents=True)
    logger.info(f"Wrote {storage.get_path(REPORT_FILE).as_posix()}")
    return report
