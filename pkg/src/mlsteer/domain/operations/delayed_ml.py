"""Delayed Mittag-Leffler matrix functions of permutable matrices.

For AB = BA the fundamental matrix of

    ^C D^alpha X(t) = A X(t) + B X(t - h),   X = I on [-h, 0]

is, on the segment ((n - 1) h, n h],

    X(t) = I + sum_{k<n} (t - kh)^((k+1) alpha) E^{k+1}_{alpha,(k+1) alpha+1}(A (t - kh)^alpha) B^k (A + B)

and the delayed perturbation used as convolution kernel is

    E_{h,alpha,beta}(t) = sum_{k<=n} (t - (k-1) h)^(k alpha + beta - 1) B^k E^{k+1}_{alpha,k alpha+beta}(A (t - (k-1) h)^alpha).

Terms whose shifted time is not positive vanish, so every function below
sums over the terms with a positive shifted time.
"""
import logging
import math
import threading
import typing as t

import numpy as np
from scipy import special

from ..entities import DelayedMLEval, MLQuery, SystemSpec
from ..entities.system import COMMUTATION_TOLERANCE, commutation_threshold, commutator_norm
from ..errors import MathDomainError, MeshError, OrderRangeError, PermutabilityError
from .specfun import log_coefficients, ml3_matrix_power, ml3_scalar

logger = logging.getLogger(__name__)

SINGULAR_WINDOW = 1e-8


def check_permutable(
    A: np.ndarray, B: np.ndarray, tol: float = COMMUTATION_TOLERANCE
) -> float:
    """Return ||AB - BA|| or raise when it exceeds tol * (1 + ||A|| ||B||)."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    norm = commutator_norm(A, B)
    threshold = commutation_threshold(A, B, tol)
    if norm > threshold:
        raise PermutabilityError(norm, threshold)
    return norm


def segment_index(t: float, h: float) -> int:
    """Index n such that (n - 1) h < t <= n h.

    Boundary points belong to the lower segment.
    """
    ratio = t / h
    return int(math.ceil(ratio - 1e-12 * max(1.0, abs(ratio))))


def _fundamental_terms(spec: SystemSpec, times: np.ndarray) -> t.List[np.ndarray]:
    n = spec.dimension
    terms: t.List[np.ndarray] = []
    factor = spec.A + spec.B
    power = np.eye(n)
    k = 0
    while True:
        shifted = times - k * spec.h
        mask = shifted > 0
        if not np.any(mask):
            return terms
        q = MLQuery(spec.alpha, (k + 1) * spec.alpha + 1, k + 1)
        term = np.zeros((times.size, n, n))
        s = shifted[mask]
        term[mask] = (
            s ** ((k + 1) * spec.alpha)
        )[:, None, None] * ml3_matrix_power(q, spec.A, s) @ (power @ factor)
        terms.append(term)
        power = power @ spec.B
        k += 1


def _perturbed_terms(
    spec: SystemSpec, beta: float, times: np.ndarray, regular: bool
) -> t.List[np.ndarray]:
    n = spec.dimension
    terms: t.List[np.ndarray] = []
    power = np.eye(n)
    leading = times + spec.h
    k = 0
    while True:
        shifted = times - (k - 1) * spec.h
        mask = shifted > 0
        if not np.any(mask):
            return terms
        q = MLQuery(spec.alpha, k * spec.alpha + beta, k + 1)
        s = shifted[mask]
        scale = s ** (k * spec.alpha + beta - 1)
        if regular:
            # the k = 0 power is the weight handled by product quadratures
            scale = scale / leading[mask] ** (beta - 1)
        term = np.zeros((times.size, n, n))
        term[mask] = scale[:, None, None] * (power @ ml3_matrix_power(q, spec.A, s))
        terms.append(term)
        power = power @ spec.B
        k += 1


def fundamental_values(spec: SystemSpec, times: np.ndarray) -> np.ndarray:
    """Vectorized delayed Mittag-Leffler fundamental matrix, shape (len(times), n, n)."""
    times = np.asarray(times, dtype=float).reshape(-1)
    n = spec.dimension
    values = np.zeros((times.size, n, n))
    values[times >= -spec.h] = np.eye(n)
    for term in _fundamental_terms(spec, times):
        values += term
    return values


def perturbed_values(
    spec: SystemSpec, beta: float, times: np.ndarray, regular: bool = False
) -> np.ndarray:
    """Vectorized delayed perturbation E_{h,alpha,beta}, shape (len(times), n, n).

    With `regular=True` the values are divided by (t + h)^(beta - 1), which
    removes the integrable singularity at t = -h.
    """
    if not beta > 0:
        raise MathDomainError(f"Delayed perturbation requires beta > 0, got {beta}")
    times = np.asarray(times, dtype=float).reshape(-1)
    values = np.zeros((times.size, spec.dimension, spec.dimension))
    for term in _perturbed_terms(spec, beta, times, regular):
        values += term
    return values


def convolution_kernel(
    spec: SystemSpec, lags: np.ndarray, regular: bool = False
) -> np.ndarray:
    """Kernel K(tau) = E_{h,alpha,alpha}(tau - h) of the variation of constants formula.

    The forced solution is int_0^t K(t - r) f(r) dr. With `regular=True`
    the values are divided by tau^(alpha - 1).
    """
    lags = np.asarray(lags, dtype=float).reshape(-1)
    return perturbed_values(spec, spec.alpha, lags - spec.h, regular=regular)


def sup_norm(
    spec: SystemSpec,
    kind: t.Literal["fundamental", "perturbed"] = "perturbed",
    grid: int = 1024,
) -> float:
    """Largest spectral norm over a uniform grid of [0, T].

    `kind` selects the fundamental matrix or E_{h,alpha,alpha}.
    """
    times = np.linspace(0.0, spec.T, grid)
    if kind == "fundamental":
        values = fundamental_values(spec, times)
    else:
        values = perturbed_values(spec, spec.alpha, times)
    return float(np.max(np.linalg.norm(values, ord=2, axis=(1, 2))))


def delayed_ml_fundamental(spec: SystemSpec, t: float) -> DelayedMLEval:
    """Delayed Mittag-Leffler fundamental matrix at a single time."""
    times = np.array([float(t)])
    n = spec.dimension
    if t < -spec.h:
        return DelayedMLEval(np.zeros((n, n)), float(t), segment_index(t, spec.h))
    terms = _fundamental_terms(spec, times)
    value = np.eye(n) + sum((term[0] for term in terms), np.zeros((n, n)))
    return DelayedMLEval(
        value=value,
        t=float(t),
        segment_index=segment_index(t, spec.h),
        terms=[float(np.linalg.norm(term[0], 2)) for term in terms],
    )


def delayed_ml_perturbed(spec: SystemSpec, beta: float, t: float) -> DelayedMLEval:
    """Delayed perturbation at a single time.

    The value is finite at every t > -h. When a negative leading power sits
    within a relative distance of 1e-8 of its segment start the result is
    flagged as near singular.
    """
    if not beta > 0:
        raise MathDomainError(f"Delayed perturbation requires beta > 0, got {beta}")
    times = np.array([float(t)])
    n = spec.dimension
    terms = _perturbed_terms(spec, beta, times, regular=False)
    value = sum((term[0] for term in terms), np.zeros((n, n)))
    near_singularity = False
    for k in range(len(terms)):
        shifted = t - (k - 1) * spec.h
        if k * spec.alpha + beta - 1 < 0 and 0 < shifted < SINGULAR_WINDOW * spec.h:
            near_singularity = True
            logger.warning(
                f"Delayed perturbation evaluated at t={t} within {shifted:.3e} of a segment start"
            )
    return DelayedMLEval(
        value=value,
        t=float(t),
        segment_index=segment_index(t, spec.h),
        terms=[float(np.linalg.norm(term[0], 2)) for term in terms],
        near_singularity=near_singularity,
    )


def _interval_majorant(
    alpha: float, beta: float, delta: float, radius: float, low: float, high: float
) -> float:
    """Bound of s^(beta-1) E^delta_{alpha,beta}(radius s^alpha) over s in [low, high].

    Each series term c_j radius^j s^(beta - 1 + j alpha) is monotone in s, so
    its maximum is reached at `high` unless its power is negative.
    """
    value = high ** (beta - 1) * ml3_scalar(
        MLQuery(alpha, beta, delta), radius * high**alpha
    )
    negative = int(math.ceil((1 - beta) / alpha)) if beta < 1 else 0
    if negative:
        log_c = log_coefficients(alpha, beta, delta, negative)
        for j in range(negative):
            power = beta - 1 + j * alpha
            if power >= 0:
                break
            coefficient = special.rgamma(beta) if j == 0 else math.exp(log_c[j])
            value += coefficient * radius**j * (low**power - high**power)
    return value


def ml_norm_bound(spec: SystemSpec, beta: float, t: float) -> float:
    """Scalar majorant of the operator norm of E_{h,alpha,beta}(t) for t > 0.

    Term k of the delayed perturbation is evaluated at s_k = t - (k - 1) h,
    which lies in [t, t + h] for k = 0 and in (0, t] for k >= 1. Each term is
    bounded over its interval with ||A|| and ||B|| in place of A and B. When
    every power is nonnegative the terms k >= 1 are the majorant evaluated at t.
    """
    if not t > 0:
        raise MathDomainError(f"Norm bound requires t > 0, got {t}")
    a = float(np.linalg.norm(spec.A, 2))
    b = float(np.linalg.norm(spec.B, 2))
    total = 0.0
    for k in range(segment_index(t, spec.h) + 1):
        if k == 0:
            low, high = t, t + spec.h
        else:
            low, high = t - (k - 1) * spec.h, t
        if k > 0 and b == 0:
            break
        total += b**k * _interval_majorant(
            spec.alpha, k * spec.alpha + beta, k + 1, a, low, high
        )
    return total


def caputo_l1_derivative(samples: np.ndarray, alpha: float, step: float) -> np.ndarray:
    """L1 approximation of the Caputo derivative at the last of uniform samples.

    Samples have shape (N + 1, ...) on the grid t_j = j * step; any trailing
    shape (vectors, matrices) is differentiated componentwise.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.shape[0] < 3:
        raise MeshError(
            f"L1 scheme requires at least 3 samples, got {samples.shape[0]}"
        )
    if not 0 < alpha < 1:
        raise OrderRangeError(alpha, 0, 1, "the L1 Caputo scheme")
    cells = samples.shape[0] - 1
    lag = np.arange(cells, dtype=float)
    weights = (lag + 1) ** (1 - alpha) - lag ** (1 - alpha)
    increments = np.diff(samples, axis=0)
    derivative = np.tensordot(weights[::-1], increments, axes=(0, 0))
    return t.cast(np.ndarray, derivative * step ** (-alpha) / special.gamma(2 - alpha))


class DelayedMLEvaluator:
    """Memoizing evaluator of one delayed Mittag-Leffler family.

    `kind` is "fundamental", "perturbed" (requires beta) or "kernel" for the
    regular part of the convolution kernel K(tau) / tau^(alpha - 1). Values
    are cached by evaluation time behind a lock, so one evaluator may be
    shared by several threads.
    """

    def __init__(
        self,
        spec: SystemSpec,
        kind: t.Literal["fundamental", "perturbed", "kernel"] = "fundamental",
        beta: t.Optional[float] = None,
        maxsize: int = 1 << 16,
    ) -> None:
        if kind == "perturbed" and beta is None:
            raise MathDomainError("Perturbed evaluator requires beta")
        self.spec = spec
        self.kind = kind
        self.beta = beta
        self.maxsize = maxsize
        self.hits = 0
        self.misses = 0
        self._cache: t.Dict[float, np.ndarray] = {}
        self._lock = threading.Lock()

    def _compute(self, times: np.ndarray) -> np.ndarray:
        if self.kind == "fundamental":
            return fundamental_values(self.spec, times)
        if self.kind == "perturbed":
            return perturbed_values(self.spec, t.cast(float, self.beta), times)
        return convolution_kernel(self.spec, times, regular=True)

    def values(self, times: np.ndarray) -> np.ndarray:
        """Values at every time, shape (len(times), n, n)."""
        keys = [float(x) for x in np.asarray(times, dtype=float).reshape(-1)]
        n = self.spec.dimension
        if not keys:
            return np.zeros((0, n, n))
        with self._lock:
            found = {key: self._cache[key] for key in keys if key in self._cache}
            missing = sorted(set(keys) - found.keys())
            self.hits += len(keys) - len(missing)
            self.misses += len(missing)
        if missing:
            fresh = dict(zip(missing, self._compute(np.array(missing))))
            with self._lock:
                if len(self._cache) + len(fresh) > self.maxsize:
                    self._cache.clear()
                self._cache.update(fresh)
            found.update(fresh)
        return np.stack([found[key] for key in keys])

    def __call__(self, time: float) -> np.ndarray:
        return t.cast(np.ndarray, self.values(np.array([time]))[0])
