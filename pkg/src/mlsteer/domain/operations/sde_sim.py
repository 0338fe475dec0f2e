"""Monte Carlo simulation of the stochastic delay system.

The mild solution

    x(t) = x_free(t) + int_0^t K(t - r) Delta(r, x(r)) dW(r)

is discretized on a uniform grid t_k = k dt with a left point Ito rule: the
coefficient is frozen at the left node of each cell. The singular kernel
K(tau) = tau^(alpha - 1) G(tau) enters through the weights

    G((l - 1/2) dt) sqrt(int_{(l-1) dt}^{l dt} tau^(2 alpha - 2) dtau / dt)

which reproduce the exact variance of the stochastic convolution of every
cell, so Monte Carlo second moments are unbiased estimates of the isometry
integral.

Paths are processed in fixed chunks of 256; chunks may run on a thread pool
without changing any result. The increments of path p are drawn from a
Philox stream keyed by (seed, p).
"""
import logging
import math
import typing as t
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy import special

from ..entities import (
    ContractionReport,
    DiffusionSpec,
    MeshSpec,
    MLQuery,
    PathEnsemble,
    PicardReport,
    SystemSpec,
    require_stochastic_order,
)
from ..errors import (
    ArgumentGuardError,
    DimensionError,
    MathDomainError,
    MeshError,
    SeriesConvergenceError,
)
from .delayed_ml import DelayedMLEvaluator, segment_index, sup_norm
from .detsolver import homogeneous_values, product_weights, quadrature_cells
from .diffusions import check_lipschitz, evaluate_diffusion
from .initial import phi_values
from .specfun import ml3_scalar, ml3_values

logger = logging.getLogger(__name__)

CHUNK = 256
CONTRACTION_GRID = 1024

ControlPolicy = t.Callable[[int, np.ndarray], np.ndarray]
"""Maps (k, noise terms of cells 0..k-1 with shape (P, k, n)) to the controls u_k with shape (P, m)."""


@dataclass
class KernelTables:
    """Lag weights of the mild scheme on a uniform grid.

    Entry l - 1 of each table belongs to the lag cell [(l - 1) dt, l dt].
    """

    step: float
    stochastic: np.ndarray
    """Weights of the noise terms, shape (N, n, n)."""
    control: np.ndarray
    """Weights of piecewise constant inputs, shape (N, n, n)."""


def path_generator(seed: int, path: int) -> np.random.Generator:
    """Counter-based generator of a single path."""
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(seed, spawn_key=(path,)))
    )


def _run_chunks(count: int, work: t.Callable[[slice], None], threads: t.Optional[int]) -> None:
    chunks = [slice(start, min(start + CHUNK, count)) for start in range(0, count, CHUNK)]
    workers = max(1, threads or 1)
    if workers == 1 or len(chunks) <= 1:
        for chunk in chunks:
            work(chunk)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for _ in pool.map(work, chunks):
            pass


def sample_brownian(
    mesh: MeshSpec,
    n_paths: int,
    seed: int,
    horizon: float,
    noise_dim: int = 1,
    threads: t.Optional[int] = None,
) -> PathEnsemble:
    """Brownian increments on the uniform grid of [0, horizon]."""
    if n_paths < 1:
        raise MathDomainError(f"At least one path is required, got {n_paths}")
    if seed < 0:
        raise MathDomainError(f"Seed must be nonnegative, got {seed}")
    cells = mesh.nodes(horizon)
    times = np.linspace(0.0, horizon, cells + 1)
    scale = math.sqrt(horizon / cells)
    increments = np.empty((n_paths, cells, noise_dim))

    def fill(chunk: slice) -> None:
        for path in range(chunk.start, chunk.stop):
            increments[path] = (
                path_generator(seed, path).standard_normal((cells, noise_dim)) * scale
            )

    _run_chunks(n_paths, fill, threads)
    return PathEnsemble(
        n_paths=n_paths, mesh=mesh, times=times, increments=increments, seed=seed
    )


def kernel_tables(
    spec: SystemSpec,
    cells: int,
    step: float,
    evaluator: t.Optional[DelayedMLEvaluator] = None,
) -> KernelTables:
    lag = np.arange(1, cells + 1, dtype=float)
    lower, upper = (lag - 1) * step, lag * step
    middle = (lag - 0.5) * step
    evaluator = evaluator or DelayedMLEvaluator(spec, "kernel")
    regular = evaluator.values(middle)
    variance = np.sqrt(product_weights(lower, upper, 2 * spec.alpha - 2) / step)
    mean = product_weights(lower, upper, spec.alpha - 1)
    return KernelTables(
        step=step,
        stochastic=regular * variance[:, None, None],
        control=regular * mean[:, None, None],
    )


def causal_sum(table: np.ndarray, sequence: np.ndarray, k: int) -> np.ndarray:
    """sum_{j <= k} table[k - j] @ sequence[:, j] for a batch of sequences (P, N, n)."""
    paths = sequence.shape[0]
    weights = table[k::-1].transpose(0, 2, 1).reshape(-1, table.shape[1])
    return t.cast(np.ndarray, sequence[:, : k + 1].reshape(paths, -1) @ weights)


def causal_convolution(table: np.ndarray, sequence: np.ndarray) -> np.ndarray:
    """Values of causal_sum at every node, shape (P, N + 1, n) with a zero first node."""
    paths, cells = sequence.shape[:2]
    result = np.zeros((paths, cells + 1, table.shape[1]))
    for k in range(cells):
        result[:, k + 1] = causal_sum(table, sequence, k)
    return result


def noise_terms(
    diff: DiffusionSpec, times: np.ndarray, states: np.ndarray, increments: np.ndarray
) -> np.ndarray:
    noise = np.empty(states[:, :-1].shape)
    for k in range(increments.shape[1]):
        sigma = evaluate_diffusion(diff, float(times[k]), states[:, k])
        noise[:, k] = np.einsum("pnd,pd->pn", sigma, increments[:, k])
    return noise


def _check_ensemble(spec: SystemSpec, diff: DiffusionSpec, ens: PathEnsemble) -> None:
    require_stochastic_order(spec)
    if abs(ens.times[-1] - spec.T) > 1e-9 * max(1.0, spec.T):
        raise MeshError(f"Ensemble horizon {ens.times[-1]} differs from T={spec.T}")
    ens.mesh.resolve_delay(spec.h)
    if ens.increments.shape[2] != diff.noise_dim:
        raise DimensionError(
            f"Ensemble has {ens.increments.shape[2]} noise channels, diffusion expects {diff.noise_dim}"
        )
    check_lipschitz(diff, spec.dimension, spec.T)


def simulate_controlled(
    spec: SystemSpec,
    diff: DiffusionSpec,
    ens: PathEnsemble,
    policy: t.Optional[ControlPolicy] = None,
    threads: t.Optional[int] = None,
    tables: t.Optional[KernelTables] = None,
    free: t.Optional[np.ndarray] = None,
) -> t.Tuple[PathEnsemble, t.Optional[np.ndarray]]:
    """Mild scheme with an optional causal control.

    The policy is called at every node t_k with the noise terms of the cells
    before t_k only, and its controls are applied on [t_k, t_k+1).

    Returns:
        The simulated ensemble and the controls with shape (P, N, m), or None without policy
    """
    _check_ensemble(spec, diff, ens)
    cells = ens.cells
    step = ens.step
    lag_tables = tables or kernel_tables(spec, cells, step)
    free_values = free if free is not None else homogeneous_values(spec, ens.times, ens.mesh)
    C = t.cast(np.ndarray, spec.C)
    states = np.empty((ens.n_paths, cells + 1, spec.dimension))
    controls = np.zeros((ens.n_paths, cells, spec.inputs)) if policy else None

    def work(chunk: slice) -> None:
        increments = ens.increments[chunk]
        paths = increments.shape[0]
        x = np.repeat(free_values[None], paths, axis=0)
        noise = np.zeros((paths, cells, spec.dimension))
        effects = np.zeros((paths, cells, spec.dimension))
        for k in range(cells):
            if policy is not None:
                u = policy(k, noise[:, :k])
                t.cast(np.ndarray, controls)[chunk, k] = u
                effects[:, k] = u @ C.T
            sigma = evaluate_diffusion(diff, float(ens.times[k]), x[:, k])
            noise[:, k] = np.einsum("pnd,pd->pn", sigma, increments[:, k])
            update = causal_sum(lag_tables.stochastic, noise, k)
            if policy is not None:
                update = update + causal_sum(lag_tables.control, effects, k)
            x[:, k + 1] = free_values[k + 1] + update
        states[chunk] = x

    _run_chunks(ens.n_paths, work, threads)
    logger.info(f"Simulated {ens.n_paths} paths on {cells} cells with the mild scheme")
    return replace(ens, states=states, scheme="mild"), controls


def simulate_mild(
    spec: SystemSpec,
    diff: DiffusionSpec,
    ens: PathEnsemble,
    threads: t.Optional[int] = None,
) -> PathEnsemble:
    """Fill the ensemble states with the mild solution."""
    result, _ = simulate_controlled(spec, diff, ens, threads=threads)
    return result


def grid_steps(length: float, step: float) -> int:
    ratio = length / step
    count = int(round(ratio))
    if count < 1 or abs(count - ratio) > 1e-9 * max(1.0, ratio):
        raise MeshError(f"Grid step {step} does not divide the delay {length}")
    return count


def simulate_integral_form(
    spec: SystemSpec,
    diff: DiffusionSpec,
    ens: PathEnsemble,
    threads: t.Optional[int] = None,
) -> PathEnsemble:
    """Explicit fractional Euler scheme of the Volterra integral equation

        x(t) = phi(0) + I^alpha [A x + B x(. - h)](t) + (1 / Gamma(alpha)) int_0^t (t - r)^(alpha - 1) Delta dW

    Uses the same increments as the mild scheme; the grid step must divide h.
    """
    _check_ensemble(spec, diff, ens)
    cells = ens.cells
    step = ens.step
    delay = grid_steps(spec.h, step)
    lag = np.arange(1, cells + 1, dtype=float)
    lower, upper = (lag - 1) * step, lag * step
    scale = special.rgamma(spec.alpha)
    drift_weights = product_weights(lower, upper, spec.alpha - 1) * scale
    noise_weights = np.sqrt(product_weights(lower, upper, 2 * spec.alpha - 2) / step) * scale
    lagged = phi_values(spec.phi, ens.times[: min(delay, cells + 1)] - spec.h)
    start = phi_values(spec.phi, np.array([0.0]))[0]
    states = np.empty((ens.n_paths, cells + 1, spec.dimension))

    def work(chunk: slice) -> None:
        increments = ens.increments[chunk]
        paths = increments.shape[0]
        x = np.empty((paths, cells + 1, spec.dimension))
        x[:, 0] = start
        drift = np.zeros((paths, cells, spec.dimension))
        noise = np.zeros((paths, cells, spec.dimension))
        for k in range(cells):
            delayed = x[:, k - delay] if k >= delay else lagged[k]
            drift[:, k] = x[:, k] @ spec.A.T + delayed @ spec.B.T
            sigma = evaluate_diffusion(diff, float(ens.times[k]), x[:, k])
            noise[:, k] = np.einsum("pnd,pd->pn", sigma, increments[:, k])
            x[:, k + 1] = (
                start
                + np.einsum("j,pjn->pn", drift_weights[k::-1], drift[:, : k + 1])
                + np.einsum("j,pjn->pn", noise_weights[k::-1], noise[:, : k + 1])
            )
        states[chunk] = x

    _run_chunks(ens.n_paths, work, threads)
    return replace(ens, states=states, scheme="integral_form")


def second_moment_isometry(
    spec: SystemSpec, diff: DiffusionSpec, t: float, mesh: MeshSpec
) -> float:
    """Ito isometry integral int_0^t ||K(t - r) Delta(r)||_F^2 dr for a deterministic coefficient."""
    if diff.kind != "deterministic":
        raise MathDomainError("The isometry integral requires a deterministic diffusion")
    require_stochastic_order(spec)
    mesh.resolve_delay(spec.h)
    if not t > 0:
        return 0.0
    lower, upper = quadrature_cells(0.0, t, mesh, spacing=spec.h)
    middle = 0.5 * (lower + upper)
    weights = product_weights(lower, upper, 2 * spec.alpha - 2)
    regular = DelayedMLEvaluator(spec, "kernel").values(middle)
    origin = np.zeros((1, spec.dimension))
    sigma = np.stack(
        [evaluate_diffusion(diff, float(t - lag), origin)[0] for lag in middle]
    )
    values = np.sum((regular @ sigma) ** 2, axis=(1, 2))
    return float(weights @ values)


def contraction_report(
    spec: SystemSpec, diff: DiffusionSpec, grid: int = CONTRACTION_GRID
) -> ContractionReport:
    """Constants of the fixed point argument in the weighted maximum norm.

    The weight parameter gamma is the power of two, possibly below 1, with
    1/4 <= L^2 lambda_T / gamma < 1/2. It is 1 when L^2 lambda_T = 0.
    """
    require_stochastic_order(spec)
    alpha, T = spec.alpha, spec.T
    a = float(np.linalg.norm(spec.A, 2))
    b = float(np.linalg.norm(spec.B, 2))
    times = np.linspace(0.0, T, grid)
    maxima: t.List[float] = []
    for k in range(segment_index(T, spec.h) + 1):
        query = MLQuery(alpha, (k + 1) * alpha, k + 1)
        values = ml3_values(query, a * times**alpha)
        maxima.append(float(np.max(values)))
        if values[-1] < maxima[-1] * (1 - 1e-12):
            logger.debug(f"M_{k} is not attained at T")
    lam = special.gamma(2 * alpha - 1) * sum(
        m**2 * b ** (2 * k) * T ** (2 * k) for k, m in enumerate(maxima)
    )
    if not math.isfinite(lam):
        raise MathDomainError(f"Contraction constant lambda_T overflows for T={T}")
    L = diff.lipschitz_const
    product = L**2 * float(lam)
    gamma = math.ldexp(1.0, math.frexp(2 * product)[1]) if product > 0 else 1.0
    ratio = product / gamma
    diagnostics: t.List[str] = []
    beta = 2 * alpha - 1
    if beta < 0.1:
        diagnostics.append(
            f"degenerate_weight: alpha={alpha} is close to 1/2, the weight E_(2 alpha - 1) varies sharply"
        )
    try:
        weight = ml3_scalar(MLQuery(beta, 1.0, max_terms=4096), gamma * T**beta)
        if not math.isfinite(weight):
            raise OverflowError
    except (ArgumentGuardError, SeriesConvergenceError, OverflowError):
        diagnostics.append(
            f"degenerate_weight: E_(2 alpha - 1)(gamma T^(2 alpha - 1)) cannot be evaluated for gamma={gamma:g}"
        )
    for diagnostic in diagnostics:
        logger.warning(diagnostic)
    return ContractionReport(
        gamma_weight=gamma,
        lambda_T=float(lam),
        M_k=maxima,
        ratio=float(ratio),
        contraction_ok=ratio < 1,
        diagnostics=diagnostics,
    )


def pairwise_sum(values: np.ndarray) -> np.ndarray:
    """Sum along the first axis by recursive halving, independent of threads and chunks."""
    values = np.asarray(values, dtype=float)
    if values.shape[0] == 0:
        return np.zeros(values.shape[1:])
    while values.shape[0] > 1:
        if values.shape[0] % 2:
            values = np.concatenate([values, np.zeros((1,) + values.shape[1:])])
        values = values[0::2] + values[1::2]
    return t.cast(np.ndarray, values[0])


def mean_square(differences: np.ndarray) -> np.ndarray:
    """Mean over paths of |x|^2 at every node, for arrays with shape (P, N + 1, n)."""
    return pairwise_sum(np.sum(differences**2, axis=2)) / differences.shape[0]


def weighted_norm(
    ms_values: np.ndarray, times: np.ndarray, alpha: float, gamma: float
) -> float:
    """sup_t E|x(t)|^2 / E_{2 alpha - 1}(gamma t^(2 alpha - 1))."""
    beta = 2 * alpha - 1
    weights = ml3_values(
        MLQuery(beta, 1.0, max_terms=4096), gamma * np.asarray(times, dtype=float) ** beta
    )
    return float(np.max(np.asarray(ms_values, dtype=float) / weights))


def picard_mild(
    spec: SystemSpec,
    diff: DiffusionSpec,
    ens: PathEnsemble,
    iterations: int = 6,
    gamma: t.Optional[float] = None,
) -> PicardReport:
    """Iterate the mild solution map against frozen increments.

    The first iterate is the deterministic solution; each iterate
    re-evaluates the coefficient along the previous one.
    """
    _check_ensemble(spec, diff, ens)
    if gamma is None:
        gamma = contraction_report(spec, diff).gamma_weight
    tables = kernel_tables(spec, ens.cells, ens.step)
    free = homogeneous_values(spec, ens.times, ens.mesh)
    current = np.repeat(free[None], ens.n_paths, axis=0)
    distances: t.List[float] = []
    for iteration in range(iterations):
        noise = noise_terms(diff, ens.times, current, ens.increments)
        following = free[None] + causal_convolution(tables.stochastic, noise)
        distances.append(
            weighted_norm(mean_square(following - current), ens.times, spec.alpha, gamma)
        )
        logger.debug(f"Picard iterate {iteration + 1}: distance {distances[-1]:.3e}")
        current = following
    return PicardReport(gamma_weight=gamma, distances=distances)


def uniqueness_window(spec: SystemSpec, diff: DiffusionSpec, grid: int = CONTRACTION_GRID) -> float:
    """Largest delta with n N^2 L^2 delta < 1, infinite when L = 0."""
    N = sup_norm(spec, "perturbed", grid)
    L = diff.lipschitz_const
    if L == 0 or N == 0:
        return math.inf
    return 1.0 / (spec.dimension * N**2 * L**2)


def ensemble_summary(ens: PathEnsemble) -> t.Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Times, mean and unbiased variance per node of the simulated states."""
    if ens.states is None:
        return np.zeros(0), np.zeros((0, 0)), np.zeros((0, 0))
    states = ens.states
    paths = states.shape[0]
    mean = pairwise_sum(states) / paths
    if paths > 1:
        variance = pairwise_sum((states - mean) ** 2) / (paths - 1)
    else:
        variance = np.zeros_like(mean)
    return ens.times, mean, variance
