"""Deterministic solutions of fractional delay systems.

Solutions are evaluated from the variation of constants formula

    x(t) = X(t) phi(-h) + int_{-h}^0 X(t - h - r) phi'(r) dr + int_0^t K(t - r) f(r) dr

where X is the delayed Mittag-Leffler fundamental matrix and K the delayed
perturbation kernel. The first two terms solve the delay system exactly when
A = 0 or phi is constant. Otherwise the history enters the equation through
A (phi(0) - phi(r - h)) on (0, h], which is added as a forcing term unless
`history_correction=False`.

Integrals are computed by product integration: on each cell [a, b] of a lag
mesh the weight tau^p is integrated exactly and the remaining smooth factors
are evaluated at the cell midpoint. Meshes are split at multiples of h, where
the kernels change analytic form, and graded toward the left end of every
piece.

An independent fractional Adams predictor-corrector (`pece_oracle`) is
provided as a reference solver.
"""
import logging
import math
import typing as t

import numpy as np
from scipy import special

from ..entities import LemmaReport, MeshSpec, MLQuery, SystemSpec, Trajectory
from ..errors import MathDomainError, MeshError, OrderRangeError
from .delayed_ml import DelayedMLEvaluator
from .initial import is_constant, phi_derivative, phi_values
from .specfun import ml3_values

logger = logging.getLogger(__name__)

Kernel = t.Callable[[np.ndarray], np.ndarray]
"""Function of lags with shape (m,) returning (m,) scalars or (m, n, n) matrices."""

Density = t.Callable[[np.ndarray], np.ndarray]
"""Function of times with shape (m,) returning (m,) scalars or (m, n) vectors."""

StateForcing = t.Callable[[float, np.ndarray], np.ndarray]

MIN_CELLS = 16
LEMMA_MESH = MeshSpec(base_step=1 / 64, grading_exponent=3.0, cells_per_unit=4096)


def time_grid(spec: SystemSpec, mesh: MeshSpec) -> np.ndarray:
    """Grid on [-h, T] made of uniform grids on [-h, 0] and [0, T]."""
    mesh.resolve_delay(spec.h)
    history = np.linspace(-spec.h, 0.0, mesh.nodes(spec.h) + 1)
    forward = np.linspace(0.0, spec.T, mesh.nodes(spec.T) + 1)
    return np.concatenate([history[:-1], forward])


def graded_edges(
    length: float, cells: int, exponent: float, both: bool = False
) -> np.ndarray:
    """Edges of [0, length] graded as (j / N)^r toward 0, or toward both ends."""
    x = np.linspace(0.0, 1.0, cells + 1)
    if both:
        x = np.where(x < 0.5, 0.5 * (2 * x) ** exponent, 1 - 0.5 * (2 - 2 * x) ** exponent)
    else:
        x = x**exponent
    return t.cast(np.ndarray, length * x)


def product_weights(lower: np.ndarray, upper: np.ndarray, exponent: float) -> np.ndarray:
    """Exact integrals of tau^p over the cells [lower, upper]."""
    if exponent == 0:
        return t.cast(np.ndarray, upper - lower)
    lower = np.maximum(lower, 0.0)
    return t.cast(
        np.ndarray,
        (upper ** (exponent + 1) - lower ** (exponent + 1)) / (exponent + 1),
    )


def quadrature_cells(
    low: float,
    high: float,
    mesh: MeshSpec,
    spacing: t.Optional[float] = None,
    grade_both: bool = False,
    min_cells: int = MIN_CELLS,
) -> t.Tuple[np.ndarray, np.ndarray]:
    """Lower and upper edges of the cells covering [low, high].

    The interval is split at the multiples of `spacing`. Each piece gets
    `cells_per_unit` cells per unit length (at least `min_cells`) graded
    toward its left end, or toward both ends when `grade_both` is set.
    """
    if not high > low:
        return np.zeros(0), np.zeros(0)
    cuts = [low]
    if spacing is not None:
        if mesh.cells_per_unit * spacing < 4:
            raise MeshError(
                f"Quadrature mesh with {mesh.cells_per_unit} cells per unit is too coarse for delay {spacing}"
            )
        margin = 1e-12 * spacing
        first = math.floor(low / spacing) + 1
        last = math.ceil(high / spacing)
        for k in range(first, last):
            cut = k * spacing
            if low + margin < cut < high - margin:
                cuts.append(cut)
    cuts.append(high)
    lower: t.List[np.ndarray] = []
    upper: t.List[np.ndarray] = []
    for a, b in zip(cuts[:-1], cuts[1:]):
        cells = max(min_cells, int(math.ceil(mesh.cells_per_unit * (b - a))))
        edges = a + graded_edges(b - a, cells, mesh.grading_exponent, both=grade_both)
        edges[-1] = b
        lower.append(edges[:-1])
        upper.append(edges[1:])
    return np.concatenate(lower), np.concatenate(upper)


def _combine(weights: np.ndarray, kernel: np.ndarray, density: np.ndarray) -> np.ndarray:
    if kernel.ndim == 1:
        return t.cast(np.ndarray, np.tensordot(weights * kernel, density, axes=(0, 0)))
    if density.ndim == 1:
        return t.cast(np.ndarray, np.einsum("m,mij,m->ij", weights, kernel, density))
    return t.cast(np.ndarray, np.einsum("m,mij,mj->i", weights, kernel, density))


def singular_conv_quadrature(
    kernel: Kernel,
    density: Density,
    interval: t.Tuple[float, float],
    mesh: MeshSpec,
    weight_exponent: float,
    t: t.Optional[float] = None,
    breakpoint_spacing: t.Optional[float] = None,
    regular: bool = False,
    grade_both: bool = False,
    min_cells: int = MIN_CELLS,
) -> np.ndarray:
    """Product integration of int_a^b kernel(t - r) density(r) dr.

    The kernel behaves like (t - r)^p near r = t, p being `weight_exponent`.
    The weight is integrated exactly on every cell of the lag mesh and the
    regular part kernel(tau) / tau^p is evaluated at the cell midpoints, which
    keeps the error first order uniformly in the singularity. When `regular`
    is set the kernel already returns its regular part.

    Arguments:
        kernel: function of the lag tau = t - r
        density: function of the integration variable r
        interval: the integration bounds (a, b)
        mesh: cells per unit length and grading exponent of the lag mesh
        weight_exponent: the exponent p > -1 of the singular weight
        t: evaluation time, defaults to b
        breakpoint_spacing: lags where the kernel changes form, usually h

    Raises:
        MeshError: when the mesh is too coarse or the weight is evaluated at negative lags
    """
    a, b = interval
    time = b if t is None else t
    if b < a:
        raise MeshError(f"Integration interval [{a}, {b}] is reversed")
    if not weight_exponent > -1:
        raise MathDomainError(f"Weight exponent must exceed -1, got {weight_exponent}")
    low, high = time - b, time - a
    if weight_exponent != 0:
        if low < -1e-12 * max(1.0, abs(time)):
            raise MeshError(
                f"Singular weight requires t >= b, got t={time} and b={b}"
            )
        low = max(low, 0.0)
    lower, upper = quadrature_cells(
        low, high, mesh, breakpoint_spacing, grade_both=grade_both, min_cells=min_cells
    )
    if lower.size == 0:
        sample = np.asarray(density(np.array([a])))
        return np.zeros(sample.shape[1:])
    middle = 0.5 * (lower + upper)
    weights = product_weights(lower, upper, weight_exponent)
    values = np.asarray(kernel(middle), dtype=float)
    if not regular and weight_exponent != 0:
        values = values / (middle**weight_exponent).reshape((-1,) + (1,) * (values.ndim - 1))
    return _combine(weights, values, np.asarray(density(time - middle), dtype=float))


def _as_density(f: Density, dimension: int) -> Density:
    def density(times: np.ndarray) -> np.ndarray:
        return np.asarray(f(times), dtype=float).reshape(times.size, dimension)

    return density


def homogeneous_values(
    spec: SystemSpec,
    times: np.ndarray,
    mesh: MeshSpec,
    history_correction: bool = True,
    fundamental: t.Optional[DelayedMLEvaluator] = None,
    kernel: t.Optional[DelayedMLEvaluator] = None,
) -> np.ndarray:
    """Unforced solution at times in [-h, T], shape (len(times), n)."""
    mesh.resolve_delay(spec.h)
    times = np.asarray(times, dtype=float).reshape(-1)
    phi = spec.phi
    h = spec.h
    fundamental = fundamental or DelayedMLEvaluator(spec, "fundamental")
    kernel = kernel or DelayedMLEvaluator(spec, "kernel")
    values = np.empty((times.size, spec.dimension))
    history = times <= 0
    values[history] = phi_values(phi, times[history])
    start = phi_values(phi, np.array([-h, 0.0]))
    constant = is_constant(phi)
    corrected = history_correction and bool(np.any(spec.A)) and not constant

    def derivative(r: np.ndarray) -> np.ndarray:
        return phi_derivative(phi, r)

    def defect(r: np.ndarray) -> np.ndarray:
        return t.cast(np.ndarray, (start[1] - phi_values(phi, r - h)) @ spec.A.T)

    for index in np.flatnonzero(~history):
        time = float(times[index])
        value = fundamental(time) @ start[0]
        if not constant:
            value = value + singular_conv_quadrature(
                fundamental.values,
                derivative,
                (-h, 0.0),
                mesh,
                0.0,
                t=time - h,
                breakpoint_spacing=h,
            )
        if corrected:
            value = value + singular_conv_quadrature(
                kernel.values,
                defect,
                (0.0, min(time, h)),
                mesh,
                spec.alpha - 1,
                t=time,
                breakpoint_spacing=h,
                regular=True,
            )
        values[index] = value
    return values


def free_response(
    spec: SystemSpec, t: float, mesh: MeshSpec, history_correction: bool = True
) -> np.ndarray:
    """Unforced solution at a single time."""
    values: np.ndarray = homogeneous_values(spec, np.array([t]), mesh, history_correction)
    return values[0]


def solve_homogeneous(
    spec: SystemSpec, mesh: MeshSpec, history_correction: bool = True
) -> Trajectory:
    """Unforced solution on the grid of `time_grid`."""
    times = time_grid(spec, mesh)
    states = homogeneous_values(spec, times, mesh, history_correction)
    logger.info(f"Solved homogeneous system on {times.size} nodes")
    return Trajectory(times=times, states=states, method="variation_of_constants", mesh=mesh)


def forced_values(
    spec: SystemSpec,
    f: Density,
    times: np.ndarray,
    mesh: MeshSpec,
    kernel: t.Optional[DelayedMLEvaluator] = None,
) -> np.ndarray:
    """Convolution int_0^t K(t - r) f(r) dr at nonnegative times."""
    mesh.resolve_delay(spec.h)
    times = np.asarray(times, dtype=float).reshape(-1)
    kernel = kernel or DelayedMLEvaluator(spec, "kernel")
    density = _as_density(f, spec.dimension)
    values = np.zeros((times.size, spec.dimension))
    for index in np.flatnonzero(times > 0):
        time = float(times[index])
        values[index] = singular_conv_quadrature(
            kernel.values,
            density,
            (0.0, time),
            mesh,
            spec.alpha - 1,
            breakpoint_spacing=spec.h,
            regular=True,
        )
    return values


def solve_forced(
    spec: SystemSpec, f: Density, mesh: MeshSpec, history_correction: bool = True
) -> Trajectory:
    """Solution driven by a forcing term.

    Arguments:
        f: vectorized forcing, maps times with shape (m,) to values with shape (m, n)
    """
    times = time_grid(spec, mesh)
    kernel = DelayedMLEvaluator(spec, "kernel")
    states = homogeneous_values(spec, times, mesh, history_correction, kernel=kernel)
    forward = times > 0
    states[forward] += forced_values(spec, f, times[forward], mesh, kernel=kernel)
    return Trajectory(times=times, states=states, method="variation_of_constants", mesh=mesh)


def _steps(length: float, step: float, name: str) -> int:
    ratio = length / step
    count = int(round(ratio))
    if count < 1 or abs(count - ratio) > 1e-9 * max(1.0, ratio):
        raise MeshError(f"Step {step} does not divide the {name} {length}")
    return count


def pece_oracle(
    spec: SystemSpec,
    mesh: MeshSpec,
    f: t.Optional[t.Union[Density, StateForcing]] = None,
    depends_on_state: bool = False,
) -> Trajectory:
    """Fractional Adams-Bashforth-Moulton predictor-corrector.

    Solves the integral form x(t) = phi(0) + I^alpha [A x + B x(. - h) + f](t)
    on a uniform grid whose step divides both h and T, so that delayed values
    are grid values (or values of phi). With `depends_on_state` the forcing is
    called as f(t, x) on single states, otherwise it is vectorized over times.

    Raises:
        MeshError: when the step exceeds h/8 or does not divide h and T
    """
    mesh.resolve_delay(spec.h)
    step = mesh.base_step
    delay = _steps(spec.h, step, "delay")
    cells = _steps(spec.T, step, "horizon")
    alpha = spec.alpha
    n = spec.dimension
    A, B = spec.A, spec.B
    forward = step * np.arange(cells + 1)
    lagged = phi_values(spec.phi, forward[: delay + 1] - spec.h)
    if f is None:
        external = np.zeros((cells + 1, n))
    elif depends_on_state:
        external = np.zeros((cells + 1, n))
    else:
        external = _as_density(t.cast(Density, f), n)(forward)

    def rhs(k: int, state: np.ndarray, delayed: np.ndarray) -> np.ndarray:
        value = A @ state + B @ delayed
        if depends_on_state:
            return value + np.asarray(
                t.cast(StateForcing, f)(float(forward[k]), state), dtype=float
            ).reshape(n)
        return value + external[k]

    states = np.zeros((cells + 1, n))
    states[0] = phi_values(spec.phi, np.array([0.0]))[0]
    derivatives = np.zeros((cells + 1, n))

    def delayed_state(k: int) -> np.ndarray:
        return t.cast(np.ndarray, states[k - delay] if k >= delay else lagged[k])

    derivatives[0] = rhs(0, states[0], delayed_state(0))
    lag = np.arange(cells + 2, dtype=float)
    predictor = (lag[1:] ** alpha - lag[:-1] ** alpha) * step**alpha / special.gamma(alpha + 1)
    corrector = (
        lag[2:] ** (alpha + 1) + lag[:-2] ** (alpha + 1) - 2 * lag[1:-1] ** (alpha + 1)
    )
    scale = step**alpha / special.gamma(alpha + 2)
    for k in range(cells):
        estimate = states[0] + predictor[k::-1] @ derivatives[: k + 1]
        first = k ** (alpha + 1) - (k - alpha) * (k + 1) ** alpha
        history = first * derivatives[0]
        if k > 0:
            history = history + corrector[k - 1 :: -1] @ derivatives[1 : k + 1]
        delayed = delayed_state(k + 1)
        guess = rhs(k + 1, estimate, delayed)
        states[k + 1] = states[0] + scale * (guess + history)
        derivatives[k + 1] = rhs(k + 1, states[k + 1], delayed)
    history_times = np.linspace(-spec.h, 0.0, delay + 1)[:-1]
    return Trajectory(
        times=np.concatenate([history_times, forward]),
        states=np.concatenate([phi_values(spec.phi, history_times), states]),
        method="pece",
        mesh=mesh,
    )


def verify_ml_inequality(
    gamma: float,
    alpha: float,
    t_grid: np.ndarray,
    mesh: t.Optional[MeshSpec] = None,
) -> LemmaReport:
    """Compare both sides of the weighted Mittag-Leffler inequality.

    The left hand side (gamma / Gamma(2 alpha - 1)) int_0^t (t - s)^(2 alpha - 2)
    E_{2 alpha - 1}(gamma s^(2 alpha - 1)) ds is computed by product
    integration graded toward both ends, the right hand side is
    E_{2 alpha - 1}(gamma t^(2 alpha - 1)). Both differ by exactly 1.
    """
    if not 0.5 < alpha < 1:
        raise OrderRangeError(alpha, 0.5, 1, "the weighted Mittag-Leffler inequality")
    if not gamma > 0:
        raise MathDomainError(f"Weight parameter gamma must be positive, got {gamma}")
    times = np.asarray(t_grid, dtype=float).reshape(-1)
    if np.any(times <= 0):
        raise MathDomainError("Inequality times must be positive")
    mesh = mesh or LEMMA_MESH
    beta = 2 * alpha - 1
    query = MLQuery(beta, 1.0, 1.0, max_terms=4096)
    constant = gamma / special.gamma(beta)

    def weight(lags: np.ndarray) -> np.ndarray:
        return np.full(lags.shape, constant)

    def density(s: np.ndarray) -> np.ndarray:
        return ml3_values(query, gamma * np.maximum(s, 0.0) ** beta)

    lhs = np.array(
        [
            singular_conv_quadrature(
                weight,
                density,
                (0.0, float(time)),
                mesh,
                beta - 1,
                regular=True,
                grade_both=True,
                min_cells=mesh.cells_per_unit,
            )
            for time in times
        ]
    )
    rhs = ml3_values(query, gamma * times**beta)
    report = LemmaReport(gamma=gamma, alpha=alpha, times=times, lhs=lhs, rhs=rhs)
    logger.info(
        f"Inequality with gamma={gamma}, alpha={alpha}: max violation {report.max_violation:.3e}"
    )
    return report


def observed_order(errors: t.Sequence[float], ratio: float = 2.0) -> t.List[float]:
    """Empirical convergence orders log(e_i / e_{i+1}) / log(ratio) of successive refinements."""
    return [
        math.log(previous / current) / math.log(ratio)
        for previous, current in zip(errors[:-1], errors[1:])
    ]
