"""Commands of the command line application.

Each command is a thin adapter over one domain operation: it builds entities
from the configuration, runs the operation and returns a `CommandOutput`.
Warnings logged by the library while a command runs are collected into the
report diagnostics.
"""
import logging
import time
import typing as t

import numpy as np

from mlsteer.domain.entities import PathEnsemble, SystemSpec
from mlsteer.domain.gateways import OutputStorage
from mlsteer.domain.operations.control import (
    cayley_hamilton_residual,
    char_poly,
    grammian,
    grammian_profile,
    hypothesis_constants,
    kalman_rank,
    steer,
)
from mlsteer.domain.operations.detsolver import (
    homogeneous_values,
    pece_oracle,
    solve_forced,
    solve_homogeneous,
    verify_ml_inequality,
)
from mlsteer.domain.operations.sde_sim import (
    contraction_report,
    ensemble_summary,
    sample_brownian,
    second_moment_isometry,
    simulate_mild,
    uniqueness_window,
)
from mlsteer.domain.operations.specfun import ml3_matrix, ml3_scalar

from .config import (
    RunConfig,
    build_diffusion,
    build_mesh,
    build_problem,
    build_query,
    build_system,
)
from .outputs import CommandOutput, OutputFormat, RunReport, Table, emit_outputs, inputs_digest

logger = logging.getLogger(__name__)

COMMANDS = (
    "eval-ml",
    "solve",
    "simulate",
    "isometry",
    "grammian",
    "rank",
    "steer",
    "verify-lemma",
    "contraction",
    "hypotheses",
)


class Context:
    """Options shared by every command."""

    def __init__(
        self,
        config: RunConfig,
        seed: t.Optional[int] = None,
        threads: t.Optional[int] = None,
        per_path: bool = False,
    ) -> None:
        self.config = config
        self.seed = config.monte_carlo.seed if seed is None else seed
        self.threads = threads
        self.per_path = per_path

    @property
    def spec(self) -> SystemSpec:
        return build_system(self.config)

    def ensemble(self, spec: SystemSpec, noise_dim: int) -> PathEnsemble:
        return sample_brownian(
            build_mesh(self.config),
            self.config.monte_carlo.n_paths,
            self.seed,
            spec.T,
            noise_dim=noise_dim,
            threads=self.threads,
        )


def _columns(prefix: str, count: int) -> t.List[str]:
    return [f"{prefix}_{i + 1}" for i in range(count)]


def _summary_table(ens: PathEnsemble, name: str = "summary") -> Table:
    times, mean, variance = ensemble_summary(ens)
    n = mean.shape[1] if mean.ndim == 2 else 0
    rows = np.column_stack([times, mean, variance]) if times.size else np.zeros((0, 1 + 2 * n))
    return Table(name, ["t"] + _columns("mean", n) + _columns("var", n), rows)


def _path_table(name: str, times: np.ndarray, values: np.ndarray, prefix: str) -> Table:
    """Long format dump of per path values with shape (P, len(times), k)."""
    paths, nodes, width = values.shape
    rows = np.column_stack(
        [
            np.tile(times, paths),
            np.repeat(np.arange(paths, dtype=float), nodes),
            values.reshape(paths * nodes, width),
        ]
    )
    return Table(name, ["t", "path"] + _columns(prefix, width), rows)


def eval_ml(ctx: Context) -> CommandOutput:
    query = build_query(ctx.config)
    block = t.cast(t.Any, ctx.config.ml_query)
    values = [ml3_scalar(query, z) for z in block.z]
    results: t.Dict[str, t.Any] = {
        "query": {
            "alpha": query.alpha,
            "beta": query.beta,
            "delta": query.delta,
            "tolerance": query.tolerance,
            "max_terms": query.max_terms,
        },
        "values": [{"z": z, "value": value} for z, value in zip(block.z, values)],
    }
    if block.matrix is not None:
        matrix = ml3_matrix(query, np.array(block.matrix, dtype=float))
        results["matrix"] = {
            "value": matrix.value,
            "terms_used": matrix.terms_used,
            "tail_bound": matrix.tail_bound,
        }
    rows = np.column_stack([block.z, values]) if values else np.zeros((0, 2))
    return CommandOutput("eval-ml", results, [Table("ml_values", ["z", "value"], rows)])


def _forcing(ctx: Context) -> t.Optional[t.Callable[[np.ndarray], np.ndarray]]:
    forcing = ctx.config.solve.forcing
    amplitude = np.array(forcing.amplitude, dtype=float)
    if forcing.kind == "none":
        return None
    if forcing.kind == "constant":
        return lambda times: np.outer(np.ones_like(times), amplitude)
    return lambda times: np.outer(np.sin(times), amplitude)


def solve(ctx: Context) -> CommandOutput:
    spec = ctx.spec
    mesh = build_mesh(ctx.config)
    block = ctx.config.solve
    f = _forcing(ctx)
    if block.method == "pece":
        trajectory = pece_oracle(spec, mesh, f)
    elif f is None:
        trajectory = solve_homogeneous(spec, mesh, block.history_correction)
    else:
        trajectory = solve_forced(spec, f, mesh, block.history_correction)
    results = {
        "method": trajectory.method,
        "history_correction": block.history_correction,
        "nodes": int(trajectory.times.size),
        "final_state": trajectory.states[-1],
    }
    rows = np.column_stack([trajectory.times, trajectory.states])
    table = Table("trajectory", ["t"] + _columns("x", spec.dimension), rows)
    return CommandOutput("solve", results, [table])


def simulate(ctx: Context) -> CommandOutput:
    spec = ctx.spec
    diff = build_diffusion(ctx.config, spec.dimension)
    ens = simulate_mild(spec, diff, ctx.ensemble(spec, diff.noise_dim), ctx.threads)
    _, mean, variance = ensemble_summary(ens)
    results = {
        "scheme": ens.scheme,
        "n_paths": ens.n_paths,
        "seed": ens.seed,
        "cells": ens.cells,
        "step": ens.step,
        "terminal_mean": mean[-1],
        "terminal_variance": variance[-1],
        "uniqueness_window": uniqueness_window(spec, diff),
    }
    tables = [_summary_table(ens)]
    if ctx.per_path:
        tables.append(_path_table("paths", ens.times, t.cast(np.ndarray, ens.states), "x"))
    return CommandOutput("simulate", results, tables)


def isometry(ctx: Context) -> CommandOutput:
    spec = ctx.spec
    mesh = build_mesh(ctx.config)
    diff = build_diffusion(ctx.config, spec.dimension)
    times = np.array(ctx.config.grid.times or [spec.T], dtype=float)
    quadrature = np.array([second_moment_isometry(spec, diff, time, mesh) for time in times])
    ens = simulate_mild(spec, diff, ctx.ensemble(spec, diff.noise_dim), ctx.threads)
    states = t.cast(np.ndarray, ens.states)
    free = homogeneous_values(spec, ens.times, mesh)
    squares = np.sum((states - free[None]) ** 2, axis=2)
    nodes = np.array([int(np.argmin(np.abs(ens.times - time))) for time in times])
    estimate = squares[:, nodes].mean(axis=0)
    if ens.n_paths > 1:
        error = squares[:, nodes].std(axis=0, ddof=1) / np.sqrt(ens.n_paths)
    else:
        error = np.zeros(nodes.size)
    rows = np.column_stack([times, quadrature, estimate, error])
    results = {
        "n_paths": ens.n_paths,
        "seed": ens.seed,
        "points": [
            {"t": row[0], "isometry": row[1], "monte_carlo": row[2], "standard_error": row[3]}
            for row in rows
        ],
    }
    table = Table("isometry", ["t", "isometry", "monte_carlo", "standard_error"], rows)
    return CommandOutput("isometry", results, [table])


def grammian_command(ctx: Context) -> CommandOutput:
    spec = ctx.spec
    mesh = build_mesh(ctx.config)
    report = grammian(spec, mesh)
    results = {
        "horizon": report.horizon,
        "grammian": report.grammian,
        "min_eig": report.min_eig,
        "eig_threshold": report.eig_threshold,
        "coercivity_gamma": report.coercivity_gamma,
        "rank": report.h_matrix_rank,
        "rank_columns": report.h_matrix_cols,
        "controllable": report.controllable,
        "char_poly": report.char_poly,
        "cayley_hamilton_residual": report.cayley_hamilton_residual,
    }
    tables = []
    horizons = ctx.config.grid.times
    if horizons:
        profile = grammian_profile(spec, mesh, horizons)
        tables.append(
            Table("grammian_profile", ["t", "min_eig"], np.column_stack([horizons, profile]))
        )
    diagnostics = []
    if report.controllable and report.min_eig < 10 * report.eig_threshold:
        diagnostics.append(
            f"coercivity_marginal: min eigenvalue {report.min_eig:.3e} is within a factor 10 of the threshold"
        )
    return CommandOutput("grammian", results, tables, diagnostics)


def rank(ctx: Context) -> CommandOutput:
    spec = ctx.spec
    matrix, value = kalman_rank(spec)
    coefficients = char_poly(spec.A)
    results = {
        "rank": value,
        "dimension": spec.dimension,
        "rank_columns": int(matrix.shape[1]),
        "controllable": value == spec.dimension,
        "char_poly": coefficients,
        "cayley_hamilton_residual": cayley_hamilton_residual(spec.A, coefficients),
    }
    return CommandOutput("rank", results)


def steer_command(ctx: Context) -> CommandOutput:
    spec = ctx.spec
    prob = build_problem(ctx.config, spec)
    result = steer(prob, ctx.ensemble(spec, prob.diff.noise_dim), ctx.threads)
    law = result.law
    errors = result.terminal_error
    energy = law.energy
    results = {
        "mode": prob.mode,
        "target": prob.target,
        "n_paths": result.ensemble.n_paths,
        "seed": result.ensemble.seed,
        "iterations": result.iterations,
        "gaps": result.gaps,
        "ratios": result.ratios,
        "converged": result.converged,
        "terminal_error_mean": float(np.mean(errors)),
        "terminal_error_max": float(np.max(errors)),
        "energy_mean": float(np.mean(energy)),
    }
    mean_control = law.values.mean(axis=0)
    tables = [
        Table(
            "control",
            ["t"] + _columns("u", spec.inputs),
            np.column_stack([law.times, mean_control]),
        ),
        _summary_table(result.ensemble, "states"),
    ]
    if ctx.per_path:
        tables.append(_path_table("control_paths", law.times, law.values, "u"))
        tables.append(
            _path_table(
                "paths",
                result.ensemble.times,
                t.cast(np.ndarray, result.ensemble.states),
                "x",
            )
        )
    return CommandOutput("steer", results, tables, list(result.diagnostics))


def verify_lemma(ctx: Context) -> CommandOutput:
    block = ctx.config.lemma
    times = np.array(block.t_values, dtype=float)
    rows: t.List[np.ndarray] = []
    checks = []
    for gamma in block.gammas:
        for alpha in block.alphas:
            report = verify_ml_inequality(gamma, alpha, times)
            gaps = report.gaps
            checks.append(
                {
                    "gamma": gamma,
                    "alpha": alpha,
                    "max_violation": report.max_violation,
                    "max_gap_error": float(np.max(np.abs(gaps - 1))) if gaps.size else 0.0,
                }
            )
            rows.append(
                np.column_stack(
                    [
                        times,
                        np.full(times.size, gamma),
                        np.full(times.size, alpha),
                        report.lhs,
                        report.rhs,
                        gaps,
                    ]
                )
            )
    results = {
        "checks": checks,
        "max_violation": max((c["max_violation"] for c in checks), default=0.0),
        "max_gap_error": max((c["max_gap_error"] for c in checks), default=0.0),
    }
    table = Table(
        "lemma",
        ["t", "gamma", "alpha", "lhs", "rhs", "gap"],
        np.concatenate(rows) if rows else np.zeros((0, 6)),
    )
    return CommandOutput("verify-lemma", results, [table])


def contraction(ctx: Context) -> CommandOutput:
    spec = ctx.spec
    diff = build_diffusion(ctx.config, spec.dimension)
    report = contraction_report(spec, diff)
    results = {
        "gamma_weight": report.gamma_weight,
        "lambda_T": report.lambda_T,
        "M_k": report.M_k,
        "ratio": report.ratio,
        "contraction_ok": report.contraction_ok,
        "uniqueness_window": uniqueness_window(spec, diff),
    }
    return CommandOutput("contraction", results, diagnostics=list(report.diagnostics))


def hypotheses(ctx: Context) -> CommandOutput:
    spec = ctx.spec
    constants = hypothesis_constants(build_problem(ctx.config, spec))
    results = {
        "M": constants.M,
        "N": constants.N,
        "K": constants.K,
        "k1": constants.k1,
        "L_adjoint": constants.L_adjoint,
        "lambda": constants.lam,
        "rho": constants.rho,
        "C1": constants.C1,
        "C2": constants.C2,
        "K_floored": constants.K_floored,
        "lambda_ok": constants.lambda_ok,
        "rho_ok": constants.rho_ok,
    }
    return CommandOutput("hypotheses", results)


HANDLERS: t.Dict[str, t.Callable[[Context], CommandOutput]] = {
    "eval-ml": eval_ml,
    "solve": solve,
    "simulate": simulate,
    "isometry": isometry,
    "grammian": grammian_command,
    "rank": rank,
    "steer": steer_command,
    "verify-lemma": verify_lemma,
    "contraction": contraction,
    "hypotheses": hypotheses,
}


class DiagnosticsCollector(logging.Handler):
    """Collect warnings emitted by the library."""

    def __init__(self) -> None:
        super().__init__(level=logging.WARNING)
        self.messages: t.List[str] = []

    def emit(self, record: logging.LogRecord) -> None:
        self.messages.append(record.getMessage())


def _merge(*sources: t.Sequence[str]) -> t.List[str]:
    merged: t.List[str] = []
    for source in sources:
        for message in source:
            if message not in merged:
                merged.append(message)
    return merged


def run_command(
    config: RunConfig,
    command: str,
    storage: OutputStorage,
    seed: t.Optional[int] = None,
    threads: t.Optional[int] = None,
    fmt: OutputFormat = "csv",
    per_path: bool = False,
) -> RunReport:
    """Run a command and write its outputs.

    Arguments:
        config: validated configuration
        command: one of `COMMANDS`
        storage: directory receiving the outputs
        seed: overrides the monte carlo seed of the configuration
        threads: maximum number of worker threads
        fmt: "csv" writes tables as CSV files, "json" embeds them into the report
        per_path: also dump per path states and controls

    Returns:
        The report of the command
    """
    if command not in HANDLERS:
        raise ValueError(f"Unknown command: {command}")
    ctx = Context(config, seed=seed, threads=threads, per_path=per_path)
    collector = DiagnosticsCollector()
    library = logging.getLogger("mlsteer")
    library.addHandler(collector)
    started = time.perf_counter()
    try:
        output = HANDLERS[command](ctx)
    finally:
        library.removeHandler(collector)
    computed = time.perf_counter()
    output.diagnostics = _merge(output.diagnostics, collector.messages)
    digest = inputs_digest(command, config.model_dump(mode="json"), ctx.seed)
    monte_carlo = config.monte_carlo.model_copy(update={"seed": ctx.seed})
    effective = config.model_copy(update={"monte_carlo": monte_carlo})
    report = emit_outputs(output, storage, digest, fmt, effective.model_dump(mode="json"))
    report.timing = {"compute": computed - started, "emit": time.perf_counter() - computed}
    logger.info(
        f"{command} computed in {report.timing['compute']:.3f}s, written in {report.timing['emit']:.3f}s"
    )
    return report
