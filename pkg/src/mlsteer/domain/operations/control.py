"""Controllability tests and steering controls.

The controllability Grammian of the system on [0, T] is

    Gamma_T = int_0^T K(T - r) C C* K(T - r)* dr

with K the delayed perturbation kernel. Steering controls are built on the
simulation grid: with V_k the control weight of cell k seen from T, the
control applied on [t_k, t_k+1) is

    u_k = C* V_k* (Gamma^{-1} xi_0 - sum_{i<k} Gamma_{i+1}^{-1} g_i)

where Gamma is the discrete Grammian of the same product rule that applies
the control, Gamma_{i+1} its tail over the cells after i, xi_0 the distance
between the target and the free response at T and g_i the contribution of
the noise of cell i to x(T). Each u_k only depends on noise observed before
t_k, and the deterministic part of x(T) - x1 vanishes up to round-off.
"""
import logging
import typing as t
from dataclasses import dataclass, replace

import numpy as np

from ..entities import (
    ControllabilityReport,
    ControlLaw,
    HypothesisConstants,
    MeshSpec,
    PathEnsemble,
    SteeringProblem,
    SteeringResult,
    SystemSpec,
    require_stochastic_order,
)
from ..errors import MathDomainError, PicardConvergenceError, SingularGrammianError
from .delayed_ml import DelayedMLEvaluator, sup_norm
from .detsolver import homogeneous_values, product_weights, quadrature_cells
from .initial import phi_values
from .sde_sim import (
    KernelTables,
    causal_convolution,
    kernel_tables,
    mean_square,
    noise_terms,
    simulate_controlled,
)

logger = logging.getLogger(__name__)

EIG_RELATIVE_THRESHOLD = 1e-8
PINV_RCOND = 1e-10
K_FLOOR = 1e-12


def char_poly(A: np.ndarray) -> np.ndarray:
    """Characteristic polynomial det(lambda I - A) by the Faddeev-LeVerrier recurrence.

    Returns:
        The n + 1 coefficients, leading coefficient first
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    identity = np.eye(n)
    coefficients = [1.0]
    M = np.zeros((n, n))
    for k in range(1, n + 1):
        M = A @ M + coefficients[-1] * identity
        coefficients.append(-float(np.trace(A @ M)) / k)
    return np.array(coefficients)


def cayley_hamilton_residual(A: np.ndarray, coefficients: np.ndarray) -> float:
    """Spectral norm of p(A), evaluated with Horner's scheme."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    value = np.zeros_like(A)
    for coefficient in coefficients:
        value = value @ A + coefficient * np.eye(A.shape[0])
    return float(np.linalg.norm(value, 2))


def kalman_rank(spec: SystemSpec) -> t.Tuple[np.ndarray, int]:
    """Rank matrix [C | AC | ... | A^(n-1) C | BC | ... | A^(n-1) B^(n-1) C] and its numerical rank."""
    n = spec.dimension
    C = t.cast(np.ndarray, spec.C)
    blocks = []
    delayed = np.eye(n)
    for _ in range(n):
        current = np.eye(n)
        for _ in range(n):
            blocks.append(current @ delayed @ C)
            current = spec.A @ current
        delayed = spec.B @ delayed
    matrix = np.hstack(blocks)
    return matrix, int(np.linalg.matrix_rank(matrix))


def grammian_matrix(
    spec: SystemSpec, mesh: MeshSpec, horizon: t.Optional[float] = None
) -> np.ndarray:
    """Controllability Grammian by product integration of the weight tau^(2 alpha - 2)."""
    require_stochastic_order(spec)
    mesh.resolve_delay(spec.h)
    T = spec.T if horizon is None else horizon
    C = t.cast(np.ndarray, spec.C)
    lower, upper = quadrature_cells(0.0, T, mesh, spacing=spec.h)
    middle = 0.5 * (lower + upper)
    weights = product_weights(lower, upper, 2 * spec.alpha - 2)
    factors = DelayedMLEvaluator(spec, "kernel").values(middle) @ C
    matrix = np.einsum("k,kim,kjm->ij", weights, factors, factors)
    asymmetry = float(np.linalg.norm(matrix - matrix.T))
    if asymmetry > 1e-10 * max(1.0, float(np.linalg.norm(matrix))):
        raise MathDomainError(f"Grammian is not symmetric (asymmetry {asymmetry:.3e})")
    return t.cast(np.ndarray, 0.5 * (matrix + matrix.T))


def _threshold(matrix: np.ndarray) -> float:
    return EIG_RELATIVE_THRESHOLD * float(np.trace(matrix)) / matrix.shape[0]


def grammian(
    spec: SystemSpec, mesh: MeshSpec, horizon: t.Optional[float] = None
) -> ControllabilityReport:
    """Grammian positivity, rank test and characteristic polynomial of A."""
    T = spec.T if horizon is None else horizon
    matrix = grammian_matrix(spec, mesh, T)
    min_eig = float(np.linalg.eigvalsh(matrix)[0])
    threshold = _threshold(matrix)
    rank_matrix, rank = kalman_rank(spec)
    coefficients = char_poly(spec.A)
    controllable = float(np.trace(matrix)) > 0 and min_eig > threshold
    if controllable != (rank == spec.dimension):
        logger.warning(
            f"Grammian test (min eigenvalue {min_eig:.3e}) and rank test (rank {rank}) disagree"
        )
    return ControllabilityReport(
        horizon=T,
        grammian=matrix,
        min_eig=min_eig,
        eig_threshold=threshold,
        coercivity_gamma=min_eig,
        h_matrix_rank=rank,
        h_matrix_cols=rank_matrix.shape[1],
        controllable=controllable,
        char_poly=[float(c) for c in coefficients],
        cayley_hamilton_residual=cayley_hamilton_residual(spec.A, coefficients),
    )


def coercivity_check(report: ControllabilityReport) -> t.Tuple[float, bool]:
    """Coercivity constant of the Grammian operator and whether it is positive."""
    return report.coercivity_gamma, report.controllable


def grammian_profile(
    spec: SystemSpec, mesh: MeshSpec, horizons: t.Sequence[float]
) -> np.ndarray:
    """Smallest Grammian eigenvalue as a function of the horizon."""
    return np.array(
        [float(np.linalg.eigvalsh(grammian_matrix(spec, mesh, T))[0]) for T in horizons]
    )


def hypothesis_constants(
    prob: SteeringProblem, report: t.Optional[ControllabilityReport] = None
) -> HypothesisConstants:
    """Constants of the nonlinear steering hypotheses.

    The adjoint control operator norm is replaced by its upper bound
    N |C| sqrt(T), so lambda is conservative.

    Raises:
        SingularGrammianError: when the Grammian has no inverse
    """
    spec = prob.spec
    report = report or grammian(spec, prob.mesh)
    if not report.controllable:
        raise SingularGrammianError(report.min_eig, report.eig_threshold)
    M = sup_norm(spec, "fundamental")
    N = sup_norm(spec, "perturbed")
    ends = phi_values(spec.phi, np.array([-spec.h, 0.0]))
    base = float(np.linalg.norm(ends[0]))
    floored = base < K_FLOOR
    if floored:
        logger.warning(f"|phi(-h)| = {base:.3e} vanishes, the ratio K uses the floor {K_FLOOR:g}")
    K = float(np.linalg.norm(ends[1] - ends[0])) / max(base, K_FLOOR)
    k1 = (1.0 / report.min_eig) ** 2
    c = float(np.linalg.norm(t.cast(np.ndarray, spec.C), 2))
    adjoint = N * c * float(np.sqrt(spec.T))
    lam = 16 * N**2 * c**2 * adjoint**2 * k1
    L = prob.diff.lipschitz_const
    rho = N**2 * L**2 * spec.T
    return HypothesisConstants(
        M=M,
        N=N,
        K=K,
        k1=k1,
        L_adjoint=adjoint,
        lam=lam,
        rho=rho,
        C1=M**2 * (4 + lam) * (1 + K**2) * base**2,
        C2=N**2 * L**2 * (4 + lam * K**2) * spec.T,
        K_floored=floored,
    )


@dataclass
class SteeringPlan:
    """Quantities shared by every path of a steering computation."""

    free: np.ndarray
    """Free response on the grid, shape (N + 1, n)."""

    tables: KernelTables
    """Lag weights of the mild scheme."""

    initial: np.ndarray
    """Gamma^{-1} xi_0."""

    gains: np.ndarray
    """C* V_k*, shape (N, m, n)."""

    recursion: np.ndarray
    """Gamma_{i+1}^{-1} times the noise weight of cell i seen from T, shape (N, n, n)."""

    def policy(self, k: int, noise: np.ndarray) -> np.ndarray:
        """Controls u_k from the noise terms of the cells before t_k."""
        paths, observed, dimension = noise.shape
        if observed:
            weights = self.recursion[:k].transpose(0, 2, 1).reshape(-1, dimension)
            running = noise.reshape(paths, -1) @ weights
        else:
            running = np.zeros((paths, dimension))
        return t.cast(np.ndarray, (self.initial - running) @ self.gains[k].T)


def steering_plan(prob: SteeringProblem, ens: PathEnsemble) -> SteeringPlan:
    """Discrete Grammians and gains of the steering control on the ensemble grid.

    Raises:
        SingularGrammianError: when the discrete Grammian is singular
    """
    spec = prob.spec
    ens.mesh.resolve_delay(spec.h)
    C = t.cast(np.ndarray, spec.C)
    cells, step = ens.cells, ens.step
    free = homogeneous_values(spec, ens.times, ens.mesh)
    tables = kernel_tables(spec, cells, step)
    inputs = tables.control[::-1] @ C / step
    contributions = step * inputs @ inputs.transpose(0, 2, 1)
    tails = np.zeros((cells + 1, spec.dimension, spec.dimension))
    tails[:cells] = np.cumsum(contributions[::-1], axis=0)[::-1]
    discrete = tails[0]
    min_eig = float(np.linalg.eigvalsh(discrete)[0])
    threshold = _threshold(discrete)
    if not (np.trace(discrete) > 0 and min_eig > threshold):
        raise SingularGrammianError(min_eig, threshold)
    inverses = np.linalg.pinv(tails[1:], rcond=PINV_RCOND, hermitian=True)
    return SteeringPlan(
        free=free,
        tables=tables,
        initial=np.linalg.solve(discrete, prob.target - free[-1]),
        gains=inputs.transpose(0, 2, 1),
        recursion=inverses @ tables.stochastic[::-1],
    )


def _law(ens: PathEnsemble, controls: np.ndarray) -> ControlLaw:
    return ControlLaw(
        times=ens.times[:-1],
        values=controls,
        step=ens.step,
        per_path=bool(np.any(controls != controls[:1])),
    )


def _forward(
    prob: SteeringProblem,
    ens: PathEnsemble,
    plan: SteeringPlan,
    threads: t.Optional[int],
    diagnostics: t.List[str],
) -> SteeringResult:
    steered, controls = simulate_controlled(
        prob.spec,
        prob.diff,
        ens,
        policy=plan.policy,
        threads=threads,
        tables=plan.tables,
        free=plan.free,
    )
    result = SteeringResult(
        law=_law(ens, t.cast(np.ndarray, controls)),
        ensemble=steered,
        target=prob.target,
        diagnostics=diagnostics,
    )
    logger.info(
        f"Steered {ens.n_paths} paths, mean terminal error {float(np.mean(result.terminal_error)):.3e}"
    )
    return result


def _check_controllable(prob: SteeringProblem) -> ControllabilityReport:
    report = grammian(prob.spec, prob.mesh)
    if not report.controllable:
        raise SingularGrammianError(report.min_eig, report.eig_threshold)
    return report


def synthesize_linear_control(
    prob: SteeringProblem, ens: PathEnsemble, threads: t.Optional[int] = None
) -> SteeringResult:
    """Minimum energy steering control for a deterministic noise coefficient.

    Raises:
        SingularGrammianError: when the system is not controllable on [0, T]
    """
    if prob.diff.kind != "deterministic":
        raise MathDomainError("Linear steering requires a deterministic diffusion")
    _check_controllable(prob)
    return _forward(prob, ens, steering_plan(prob, ens), threads, [])


def _hypothesis_diagnostics(constants: HypothesisConstants) -> t.List[str]:
    diagnostics = []
    if constants.K_floored:
        diagnostics.append(f"k_floor: |phi(-h)| vanishes, K computed with floor {K_FLOOR:g}")
    if not constants.lambda_ok:
        diagnostics.append(f"hypothesis_lambda: lambda = {constants.lam:.6g} is not below 1")
    if not constants.rho_ok:
        diagnostics.append(f"hypothesis_rho: rho = {constants.rho:.6g} is not below 1")
    return diagnostics


def _picard(
    prob: SteeringProblem,
    ens: PathEnsemble,
    plan: SteeringPlan,
    constants: HypothesisConstants,
    diagnostics: t.List[str],
) -> SteeringResult:
    C = t.cast(np.ndarray, prob.spec.C)
    deterministic = (plan.gains @ plan.initial) @ C.T
    current = plan.free[None] + causal_convolution(plan.tables.control, deterministic[None])
    current = np.repeat(current, ens.n_paths, axis=0)
    gaps: t.List[float] = []
    controls = np.zeros((ens.n_paths, ens.cells, prob.spec.inputs))
    converged = False
    for _ in range(prob.picard_max_iterations):
        noise = noise_terms(prob.diff, ens.times, current, ens.increments)
        compensations = np.einsum("iab,pib->pia", plan.recursion, noise)
        running = np.zeros_like(compensations)
        running[:, 1:] = np.cumsum(compensations, axis=1)[:, :-1]
        controls = np.einsum("kmn,pkn->pkm", plan.gains, plan.initial - running)
        following = (
            plan.free[None]
            + causal_convolution(plan.tables.control, controls @ C.T)
            + causal_convolution(plan.tables.stochastic, noise)
        )
        gaps.append(float(np.max(mean_square(following - current))))
        current = following
        logger.debug(f"Picard iterate {len(gaps)}: gap {gaps[-1]:.3e}")
        if gaps[-1] <= prob.picard_tolerance:
            converged = True
            break
    result = SteeringResult(
        law=_law(ens, controls),
        ensemble=replace(ens, states=current, scheme="mild"),
        target=prob.target,
        iterations=len(gaps),
        gaps=gaps,
        converged=converged,
        diagnostics=diagnostics,
    )
    if not converged:
        ratio = result.ratios[-1] if result.ratios else float("nan")
        if constants.rho_ok:
            raise PicardConvergenceError(len(gaps), gaps[-1], ratio)
        diagnostics.append(
            f"non_contractive: stopped after {len(gaps)} iterations with ratio {ratio:.3f}"
        )
    return result


def steer_nonlinear(
    prob: SteeringProblem, ens: PathEnsemble, threads: t.Optional[int] = None
) -> SteeringResult:
    """Steering control for a state dependent noise coefficient.

    In `nonlinear_causal` mode the control and the state are computed in a
    single forward pass. In `nonlinear_picard` mode the steering operator is
    iterated against the frozen increments, starting from the noiseless
    steered path, until the mean-square gap between iterates falls below
    the tolerance.

    Raises:
        SingularGrammianError: when the system is not controllable on [0, T]
        PicardConvergenceError: when a contractive Picard iteration reaches its cap
    """
    report = _check_controllable(prob)
    constants = hypothesis_constants(prob, report)
    diagnostics = _hypothesis_diagnostics(constants)
    plan = steering_plan(prob, ens)
    if prob.mode != "nonlinear_picard":
        result = _forward(prob, ens, plan, threads, diagnostics)
    else:
        if not constants.rho_ok:
            diagnostics.append(
                f"non_contractive: rho = {constants.rho:.6g} >= 1, Picard iteration may diverge"
            )
        result = _picard(prob, ens, plan, constants, diagnostics)
    for diagnostic in result.diagnostics:
        logger.warning(diagnostic)
    return result


def steer(
    prob: SteeringProblem, ens: PathEnsemble, threads: t.Optional[int] = None
) -> SteeringResult:
    """Steer the ensemble with the strategy selected by the problem mode."""
    if prob.mode == "linear":
        return synthesize_linear_control(prob, ens, threads)
    return steer_nonlinear(prob, ens, threads)


def control_energy(law: ControlLaw) -> np.ndarray:
    """Per path control energy sum_k |u_k|^2 dt."""
    return law.energy
