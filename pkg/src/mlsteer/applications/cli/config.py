"""Configuration file of the command line application.

Configurations are strict JSON documents: unknown keys are rejected and every
schema violation is reported at once. Domain checks (dimensions,
permutability, admissible fractional order) run after the schema validation
and are collected as well.
"""
import json
import typing as t
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from mlsteer.domain.entities import (
    DiffusionSpec,
    InitialFunction,
    MeshSpec,
    MLQuery,
    SteeringProblem,
    SystemSpec,
    require_stochastic_order,
)
from mlsteer.domain.errors import ConfigParseError, MLSteerError, SchemaError
from mlsteer.domain.operations.diffusions import (
    constant_diffusion,
    linear_state_diffusion,
    sin_state_diffusion,
    table_diffusion,
)

Matrix = t.List[t.List[float]]

STOCHASTIC_COMMANDS = ("simulate", "isometry", "grammian", "steer", "contraction", "hypotheses")
SYSTEM_COMMANDS = STOCHASTIC_COMMANDS + ("solve", "rank")


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SystemConfig(StrictModel):
    A: Matrix
    B: Matrix
    C: t.Optional[Matrix] = None
    h: float = Field(gt=0)
    alpha: float = Field(gt=0, le=1)
    T: float = Field(gt=0)
    commutation_tol: float = Field(1e-10, gt=0)


class InitialConfig(StrictModel):
    """Polynomial coefficients have one row per state coordinate, in ascending powers of t."""

    kind: t.Literal["polynomial", "spline"] = "polynomial"
    coefficients: t.Optional[Matrix] = None
    knots: t.Optional[t.List[float]] = None
    values: t.Optional[Matrix] = None

    @model_validator(mode="after")
    def check_representation(self) -> "InitialConfig":
        if self.kind == "polynomial" and self.coefficients is None:
            raise ValueError("polynomial initial function requires 'coefficients'")
        if self.kind == "spline" and (self.knots is None or self.values is None):
            raise ValueError("spline initial function requires 'knots' and 'values'")
        return self


class DiffusionConfig(StrictModel):
    kind: t.Literal["constant", "linear_state", "sin_state", "custom-table"] = "constant"
    sigma: float = 0.0
    matrix: t.Optional[Matrix] = None
    times: t.Optional[t.List[float]] = None
    values: t.Optional[t.List[Matrix]] = None

    @model_validator(mode="after")
    def check_table(self) -> "DiffusionConfig":
        if self.kind == "custom-table" and (self.times is None or self.values is None):
            raise ValueError("custom-table diffusion requires 'times' and 'values'")
        return self


class MeshConfig(StrictModel):
    base_step: float = Field(1 / 64, gt=0)
    grading_exponent: float = Field(2.0, ge=1)
    cells_per_unit: int = Field(2048, ge=8)


class MonteCarloConfig(StrictModel):
    n_paths: int = Field(1000, ge=1)
    seed: int = Field(0, ge=0)


class MLQueryConfig(StrictModel):
    alpha: float = Field(gt=0)
    beta: float = Field(gt=0)
    delta: float = Field(1.0, ge=1)
    tolerance: float = Field(1e-12, gt=0)
    max_terms: int = Field(512, ge=16)
    z: t.List[float] = Field(default_factory=list)
    matrix: t.Optional[Matrix] = None


class SteerConfig(StrictModel):
    mode: t.Literal["linear", "nonlinear_causal", "nonlinear_picard"] = "linear"
    picard_tolerance: float = Field(1e-12, gt=0)
    picard_max_iterations: int = Field(50, ge=1)


class LemmaConfig(StrictModel):
    gammas: t.List[float] = Field(default_factory=lambda: [0.5, 1.0, 2.0])
    alphas: t.List[float] = Field(default_factory=lambda: [0.6, 0.75, 0.9])
    t_values: t.List[float] = Field(default_factory=lambda: [0.25, 0.5, 1.0, 1.5, 2.0])


class ForcingConfig(StrictModel):
    """f(t) = amplitude (constant) or amplitude sin(t) (sin)."""

    kind: t.Literal["none", "constant", "sin"] = "none"
    amplitude: t.List[float] = Field(default_factory=list)


class SolveConfig(StrictModel):
    method: t.Literal["variation_of_constants", "pece"] = "variation_of_constants"
    forcing: ForcingConfig = Field(default_factory=ForcingConfig)
    history_correction: bool = True


class GridConfig(StrictModel):
    times: t.List[float] = Field(default_factory=list)


class RunConfig(StrictModel):
    system: t.Optional[SystemConfig] = None
    initial: t.Optional[InitialConfig] = None
    diffusion: DiffusionConfig = Field(default_factory=DiffusionConfig)
    mesh: MeshConfig = Field(default_factory=MeshConfig)
    monte_carlo: MonteCarloConfig = Field(default_factory=MonteCarloConfig)
    ml_query: t.Optional[MLQueryConfig] = None
    target: t.Optional[t.List[float]] = None
    steer: SteerConfig = Field(default_factory=SteerConfig)
    lemma: LemmaConfig = Field(default_factory=LemmaConfig)
    solve: SolveConfig = Field(default_factory=SolveConfig)
    grid: GridConfig = Field(default_factory=GridConfig)


def _location(loc: t.Sequence[t.Union[int, str]]) -> str:
    return ".".join(str(part) for part in loc) or "<root>"


def build_system(config: RunConfig) -> SystemSpec:
    system = t.cast(SystemConfig, config.system)
    n = len(system.A)
    if config.initial is None:
        phi = InitialFunction("polynomial", coefficients=np.ones((n, 1)))
    else:
        phi = InitialFunction(
            config.initial.kind,
            coefficients=None
            if config.initial.coefficients is None
            else np.array(config.initial.coefficients, dtype=float),
            knots=None if config.initial.knots is None else np.array(config.initial.knots),
            values=None if config.initial.values is None else np.array(config.initial.values),
        )
    return SystemSpec(
        A=np.array(system.A, dtype=float),
        B=np.array(system.B, dtype=float),
        C=None if system.C is None else np.array(system.C, dtype=float),
        h=system.h,
        alpha=system.alpha,
        T=system.T,
        phi=phi,
        commutation_tol=system.commutation_tol,
    )


def build_diffusion(config: RunConfig, dimension: int) -> DiffusionSpec:
    diffusion = config.diffusion
    if diffusion.kind == "constant":
        if diffusion.matrix is not None:
            return constant_diffusion(np.array(diffusion.matrix, dtype=float), dimension)
        return constant_diffusion(diffusion.sigma, dimension)
    if diffusion.kind == "linear_state":
        return linear_state_diffusion(diffusion.sigma, dimension)
    if diffusion.kind == "sin_state":
        return sin_state_diffusion(diffusion.sigma, dimension)
    return table_diffusion(
        np.array(diffusion.times, dtype=float), np.array(diffusion.values, dtype=float)
    )


def build_mesh(config: RunConfig) -> MeshSpec:
    return MeshSpec(
        base_step=config.mesh.base_step,
        grading_exponent=config.mesh.grading_exponent,
        cells_per_unit=config.mesh.cells_per_unit,
    )


def build_query(config: RunConfig) -> MLQuery:
    query = t.cast(MLQueryConfig, config.ml_query)
    return MLQuery(
        alpha=query.alpha,
        beta=query.beta,
        delta=query.delta,
        tolerance=query.tolerance,
        max_terms=query.max_terms,
    )


def build_problem(config: RunConfig, spec: SystemSpec) -> SteeringProblem:
    target = np.zeros(spec.dimension) if config.target is None else np.array(config.target)
    return SteeringProblem(
        target=target,
        spec=spec,
        diff=build_diffusion(config, spec.dimension),
        mesh=build_mesh(config),
        mode=config.steer.mode,
        picard_tolerance=config.steer.picard_tolerance,
        picard_max_iterations=config.steer.picard_max_iterations,
    )


def domain_problems(config: RunConfig, command: t.Optional[str] = None) -> t.List[str]:
    """Collect the domain violations of a schema-valid configuration."""
    problems: t.List[str] = []
    needs_system = command in SYSTEM_COMMANDS
    if needs_system and config.system is None:
        problems.append(f"system: required by the '{command}' command")
    if command == "eval-ml" and config.ml_query is None:
        problems.append("ml_query: required by the 'eval-ml' command")
    if command == "steer" and config.target is None:
        problems.append("target: required by the 'steer' command")
    if config.system is None:
        return problems
    spec: t.Optional[SystemSpec] = None
    try:
        spec = build_system(config)
    except MLSteerError as exc:
        problems.append(f"system: {exc.msg}")
    if spec is None:
        return problems
    if command in STOCHASTIC_COMMANDS:
        try:
            require_stochastic_order(spec)
        except MLSteerError as exc:
            problems.append(f"system.alpha: {exc.msg}")
    try:
        build_diffusion(config, spec.dimension)
    except MLSteerError as exc:
        problems.append(f"diffusion: {exc.msg}")
    try:
        build_mesh(config).resolve_delay(spec.h)
    except MLSteerError as exc:
        problems.append(f"mesh.base_step: {exc.msg}")
    if config.target is not None and len(config.target) != spec.dimension:
        problems.append(
            f"target: has dimension {len(config.target)}, expected {spec.dimension}"
        )
    forcing = config.solve.forcing
    if forcing.kind != "none" and len(forcing.amplitude) != spec.dimension:
        problems.append(
            f"solve.forcing.amplitude: has dimension {len(forcing.amplitude)}, expected {spec.dimension}"
        )
    return problems


def parse_config(path: t.Union[str, Path], command: t.Optional[str] = None) -> RunConfig:
    """Read and validate a configuration file.

    Raises:
        ConfigParseError: when the file is not valid JSON
        SchemaError: when the document violates the schema or the domain constraints
        OSError: when the file cannot be read
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigParseError(path.as_posix(), exc.lineno, exc.colno, exc.msg) from exc
    try:
        config = RunConfig.model_validate(data)
    except ValidationError as exc:
        raise SchemaError(
            [f"{_location(error['loc'])}: {error['msg']}" for error in exc.errors()]
        ) from exc
    problems = domain_problems(config, command)
    if problems:
        raise SchemaError(problems)
    return config
