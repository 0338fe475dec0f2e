"""Builtin noise coefficients and their evaluation on batches of paths.

Arbitrary callables can always be wrapped in a `DiffusionSpec`; the builtins
below are the ones which can be described in a configuration file.
"""
import logging
import typing as t

import numpy as np

from ..entities import DiffusionSpec
from ..errors import DimensionError, LipschitzError, MathDomainError

logger = logging.getLogger(__name__)


def constant_diffusion(
    sigma: t.Union[float, np.ndarray], dimension: int, noise_dim: t.Optional[int] = None
) -> DiffusionSpec:
    """Deterministic noise coefficient Delta(t, x) = sigma.

    A scalar sigma stands for sigma times the (n, d) identity, with d = n
    unless `noise_dim` is given. Vectors are read as (n, 1) matrices.
    """
    if np.ndim(sigma) == 0:
        matrix = float(sigma) * np.eye(dimension, noise_dim or dimension)
    else:
        matrix = np.asarray(sigma, dtype=float)
        if matrix.ndim == 1:
            matrix = matrix[:, None]
    if matrix.shape[0] != dimension:
        raise DimensionError(
            f"Diffusion matrix has {matrix.shape[0]} rows, expected {dimension}"
        )

    def delta_fn(time: float, states: np.ndarray) -> np.ndarray:
        return matrix

    return DiffusionSpec(
        kind="deterministic",
        delta_fn=delta_fn,
        lipschitz_const=0.0,
        sup_at_zero=float(np.linalg.norm(matrix)),
        noise_dim=matrix.shape[1],
        name="constant",
    )


def linear_state_diffusion(sigma: float, dimension: int) -> DiffusionSpec:
    """Delta(t, x) = sigma diag(x), one Brownian motion per coordinate."""

    def delta_fn(time: float, states: np.ndarray) -> np.ndarray:
        return sigma * states[:, :, None] * np.eye(dimension)[None]

    return DiffusionSpec(
        kind="state_dependent",
        delta_fn=delta_fn,
        lipschitz_const=abs(float(sigma)),
        sup_at_zero=0.0,
        noise_dim=dimension,
        name="linear_state",
    )


def sin_state_diffusion(sigma: float, dimension: int) -> DiffusionSpec:
    """Delta(t, x) = sigma diag(sin x), one Brownian motion per coordinate."""

    def delta_fn(time: float, states: np.ndarray) -> np.ndarray:
        return sigma * np.sin(states)[:, :, None] * np.eye(dimension)[None]

    return DiffusionSpec(
        kind="state_dependent",
        delta_fn=delta_fn,
        lipschitz_const=abs(float(sigma)),
        sup_at_zero=0.0,
        noise_dim=dimension,
        name="sin_state",
    )


def table_diffusion(times: np.ndarray, values: np.ndarray) -> DiffusionSpec:
    """Deterministic piecewise constant coefficient.

    `values[i]` with shape (n, d) applies on [times[i], times[i + 1]); the
    last matrix applies from the last time on, the first one before it.
    """
    times = np.asarray(times, dtype=float).reshape(-1)
    values = np.asarray(values, dtype=float)
    if values.ndim == 2:
        values = values[:, :, None]
    if values.ndim != 3 or values.shape[0] != times.size:
        raise DimensionError(
            f"Diffusion table needs one (n, d) matrix per time, got {values.shape} for {times.size} times"
        )
    if times.size == 0 or np.any(np.diff(times) <= 0):
        raise MathDomainError("Diffusion table times must be strictly increasing")

    def delta_fn(time: float, states: np.ndarray) -> np.ndarray:
        index = int(np.searchsorted(times, time, side="right")) - 1
        return t.cast(np.ndarray, values[min(max(index, 0), times.size - 1)])

    return DiffusionSpec(
        kind="deterministic",
        delta_fn=delta_fn,
        lipschitz_const=0.0,
        sup_at_zero=float(max(np.linalg.norm(matrix) for matrix in values)),
        noise_dim=values.shape[2],
        name="custom-table",
    )


def zero_diffusion(dimension: int) -> DiffusionSpec:
    return constant_diffusion(np.zeros((dimension, 1)), dimension)


def evaluate_diffusion(diff: DiffusionSpec, time: float, states: np.ndarray) -> np.ndarray:
    """Evaluate the coefficient on a batch of states with shape (P, n).

    Returns:
        An array with shape (P, n, d)
    """
    states = np.asarray(states, dtype=float)
    paths, dimension = states.shape
    values = np.asarray(diff.delta_fn(time, states), dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if values.ndim == 2:
        values = np.broadcast_to(values, (paths,) + values.shape)
    if values.shape != (paths, dimension, diff.noise_dim):
        raise DimensionError(
            f"Diffusion {diff.name} returned shape {values.shape}, expected {(paths, dimension, diff.noise_dim)}"
        )
    return values


def check_lipschitz(
    diff: DiffusionSpec,
    dimension: int,
    horizon: float,
    samples: int = 64,
    seed: int = 0,
    scale: float = 4.0,
) -> float:
    """Spot-check the declared Lipschitz constant on random pairs of states.

    Returns:
        The largest observed ratio ||Delta(t, x) - Delta(t, y)||_F / ||x - y||

    Raises:
        LipschitzError: when the observed ratio exceeds the declared constant
    """
    if diff.kind == "deterministic":
        return 0.0
    rng = np.random.default_rng(seed)
    times = rng.uniform(0.0, horizon, size=samples)
    left = rng.normal(scale=scale, size=(samples, dimension))
    right = left + rng.normal(size=(samples, dimension))
    observed = 0.0
    for index, time in enumerate(times):
        pair = np.stack([left[index], right[index]])
        values = evaluate_diffusion(diff, float(time), pair)
        distance = float(np.linalg.norm(left[index] - right[index]))
        if distance > 0:
            observed = max(observed, float(np.linalg.norm(values[0] - values[1])) / distance)
    if observed > diff.lipschitz_const * (1 + 1e-9) + 1e-12:
        raise LipschitzError(observed, diff.lipschitz_const)
    logger.debug(f"Diffusion {diff.name}: observed Lipschitz ratio {observed:.3e}")
    return observed
