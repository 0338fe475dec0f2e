import enum
import json
import logging
import typing as t
from pathlib import Path

import typer

from mlsteer import __version__
from mlsteer.adapters.gateways.filesystem import LocalDirectory
from mlsteer.domain.errors import MLSteerError

from .commands import run_command
from .config import parse_config

cli = typer.Typer(name="mlsteer", no_args_is_help=True)
"""mlsteer CLI entrypoint."""


class Format(str, enum.Enum):
    csv = "csv"
    json = "json"


CONFIG = typer.Option(..., "--config", "-c", help="Path to the JSON configuration file")
OUT_DIR = typer.Option(Path("."), "--out-dir", "-o", help="Directory receiving the outputs")
SEED = typer.Option(None, "--seed", min=0, help="Override the monte carlo seed")
THREADS = typer.Option(
    None, "--threads", min=1, envvar="MLSTEER_THREADS", help="Maximum number of worker threads"
)
FORMAT = typer.Option(Format.csv, "--format", help="Write tables as CSV files or embed them in the report")
PER_PATH = typer.Option(False, "--per-path", help="Also dump per path states and controls")


def version_callback(value: bool) -> None:
    """Callback to show version and exit when '--version' option is provided."""
    if value:
        print(__version__)
        raise typer.Exit()


@cli.callback()
def common(
    ctx: typer.Context,
    version: bool = typer.Option(None, "--version", callback=version_callback),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Log progress messages"),
) -> None:
    """Delayed Mittag-Leffler functions, fractional delay systems and their controllability."""
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(levelname)s - %(message)s",
        force=True,
    )


def fail(error: str, code: int, message: str) -> t.NoReturn:
    typer.echo(json.dumps({"error": error, "code": code, "message": message}), err=True)
    raise typer.Exit(code)


def execute(
    command: str,
    config: Path,
    out_dir: Path,
    seed: t.Optional[int],
    threads: t.Optional[int],
    fmt: Format,
    per_path: bool,
) -> None:
    try:
        run_config = parse_config(config, command)
        storage = LocalDirectory(out_dir, create=True)
        report = run_command(
            run_config,
            command,
            storage,
            seed=seed,
            threads=threads,
            fmt=fmt.value,
            per_path=per_path,
        )
    except MLSteerError as exc:
        fail(type(exc).__name__, exc.code, exc.msg)
    except OSError as exc:
        fail(type(exc).__name__, 1, str(exc))
    typer.echo(
        json.dumps(
            {
                "command": report.command,
                "outputs": [storage.get_path(name).as_posix() for name in report.outputs],
                "diagnostics": report.diagnostics,
            },
            indent=2,
        )
    )


@cli.command("eval-ml")
def eval_ml(
    config: Path = CONFIG,
    out_dir: Path = OUT_DIR,
    seed: t.Optional[int] = SEED,
    threads: t.Optional[int] = THREADS,
    fmt: Format = FORMAT,
    per_path: bool = PER_PATH,
) -> None:
    """Evaluate three-parameter Mittag-Leffler functions of scalars and matrices."""
    execute("eval-ml", config, out_dir, seed, threads, fmt, per_path)


@cli.command("solve")
def solve(
    config: Path = CONFIG,
    out_dir: Path = OUT_DIR,
    seed: t.Optional[int] = SEED,
    threads: t.Optional[int] = THREADS,
    fmt: Format = FORMAT,
    per_path: bool = PER_PATH,
) -> None:
    """Solve the deterministic delay system."""
    execute("solve", config, out_dir, seed, threads, fmt, per_path)


@cli.command("simulate")
def simulate(
    config: Path = CONFIG,
    out_dir: Path = OUT_DIR,
    seed: t.Optional[int] = SEED,
    threads: t.Optional[int] = THREADS,
    fmt: Format = FORMAT,
    per_path: bool = PER_PATH,
) -> None:
    """Simulate the stochastic delay system with the mild scheme."""
    execute("simulate", config, out_dir, seed, threads, fmt, per_path)


@cli.command("isometry")
def isometry(
    config: Path = CONFIG,
    out_dir: Path = OUT_DIR,
    seed: t.Optional[int] = SEED,
    threads: t.Optional[int] = THREADS,
    fmt: Format = FORMAT,
    per_path: bool = PER_PATH,
) -> None:
    """Compare the Ito isometry integral with its monte carlo estimate."""
    execute("isometry", config, out_dir, seed, threads, fmt, per_path)


@cli.command("grammian")
def grammian(
    config: Path = CONFIG,
    out_dir: Path = OUT_DIR,
    seed: t.Optional[int] = SEED,
    threads: t.Optional[int] = THREADS,
    fmt: Format = FORMAT,
    per_path: bool = PER_PATH,
) -> None:
    """Compute the controllability Grammian and its positivity."""
    execute("grammian", config, out_dir, seed, threads, fmt, per_path)


@cli.command("rank")
def rank(
    config: Path = CONFIG,
    out_dir: Path = OUT_DIR,
    seed: t.Optional[int] = SEED,
    threads: t.Optional[int] = THREADS,
    fmt: Format = FORMAT,
    per_path: bool = PER_PATH,
) -> None:
    """Run the rank test of controllability."""
    execute("rank", config, out_dir, seed, threads, fmt, per_path)


@cli.command("steer")
def steer(
    config: Path = CONFIG,
    out_dir: Path = OUT_DIR,
    seed: t.Optional[int] = SEED,
    threads: t.Optional[int] = THREADS,
    fmt: Format = FORMAT,
    per_path: bool = PER_PATH,
) -> None:
    """Steer the stochastic system to the target state."""
    execute("steer", config, out_dir, seed, threads, fmt, per_path)


@cli.command("verify-lemma")
def verify_lemma(
    config: Path = CONFIG,
    out_dir: Path = OUT_DIR,
    seed: t.Optional[int] = SEED,
    threads: t.Optional[int] = THREADS,
    fmt: Format = FORMAT,
    per_path: bool = PER_PATH,
) -> None:
    """Check the weighted Mittag-Leffler inequality."""
    execute("verify-lemma", config, out_dir, seed, threads, fmt, per_path)


@cli.command("contraction")
def contraction(
    config: Path = CONFIG,
    out_dir: Path = OUT_DIR,
    seed: t.Optional[int] = SEED,
    threads: t.Optional[int] = THREADS,
    fmt: Format = FORMAT,
    per_path: bool = PER_PATH,
) -> None:
    """Report the constants of the contraction argument."""
    execute("contraction", config, out_dir, seed, threads, fmt, per_path)


@cli.command("hypotheses")
def hypotheses(
    config: Path = CONFIG,
    out_dir: Path = OUT_DIR,
    seed: t.Optional[int] = SEED,
    threads: t.Optional[int] = THREADS,
    fmt: Format = FORMAT,
    per_path: bool = PER_PATH,
) -> None:
    """Report the constants of the nonlinear steering hypotheses."""
    execute("hypotheses", config, out_dir, seed, threads, fmt, per_path)
