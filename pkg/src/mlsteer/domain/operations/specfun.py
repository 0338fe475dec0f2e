"""Gamma, Beta, Pochhammer and Mittag-Leffler functions.

Gamma, Beta and Pochhammer delegate to `scipy.special` and only add domain and
overflow checks. Mittag-Leffler functions are summed from their power series

    E^delta_{alpha,beta}(z) = sum_k (delta)_k z^k / (k! Gamma(k alpha + beta))

with coefficients computed in log space. The number of terms K is fixed by
the scalar majorant sum_k c_k |z|^k: the last two terms are below `tolerance`
times the partial sums and the ratio test bounds the tail by the same amount.
Arguments are restricted to |z| <= 50 (operator norm for matrices).

A double precision sum is accepted when both its tail bound and its rounding
bound, 8 K eps times the sum of the term magnitudes, are below `tolerance`
times the value (for matrices, the smallest singular value floored at
`tolerance` times the largest). Negative arguments lose digits to
cancellation between alternating terms; such sums are redone with `mpmath`
at a working precision raised until the rounding bound meets the tolerance.
"""
import logging
import math
import typing as t

import mpmath
import numpy as np
from scipy import special

from ..entities import MLMatrixValue, MLQuery
from ..errors import (
    ArgumentGuardError,
    DimensionError,
    MathDomainError,
    OverflowDomainError,
    SeriesConvergenceError,
)

logger = logging.getLogger(__name__)

GAMMA_OVERFLOW = 171.6
ARGUMENT_GUARD = 50.0
EPS = float(np.finfo(float).eps)
ROUNDING_FACTOR = 8.0
MAX_DIGITS = 2000


def gamma_fn(x: float) -> float:
    """Euler Gamma function for positive arguments.

    Raises:
        MathDomainError: when x <= 0
        OverflowDomainError: when x > 171.6
    """
    if not x > 0:
        raise MathDomainError(f"Gamma function requires a positive argument, got {x}")
    if x > GAMMA_OVERFLOW:
        raise OverflowDomainError(
            f"Gamma function overflows for arguments above {GAMMA_OVERFLOW}, got {x}"
        )
    return float(special.gamma(x))


def beta_fn(a: float, b: float) -> float:
    """Beta function B(a, b) = Gamma(a) Gamma(b) / Gamma(a + b)."""
    if not (a > 0 and b > 0):
        raise MathDomainError(f"Beta function requires positive arguments, got ({a}, {b})")
    return float(special.beta(a, b))


def pochhammer(delta: float, k: int) -> float:
    """Rising factorial delta (delta + 1) ... (delta + k - 1), equal to 1 when k = 0."""
    if int(k) != k or k < 0:
        raise MathDomainError(f"Pochhammer symbol requires a nonnegative integer k, got {k}")
    value = float(special.poch(delta, int(k)))
    if not math.isfinite(value):
        raise OverflowDomainError(f"Pochhammer symbol ({delta})_{k} overflows")
    return value


def log_coefficients(alpha: float, beta: float, delta: float, count: int) -> np.ndarray:
    """Logarithms of c_k = (delta)_k / (k! Gamma(k alpha + beta)) for k < count."""
    k = np.arange(count, dtype=float)
    return t.cast(
        np.ndarray,
        special.gammaln(delta + k)
        - special.gammaln(delta)
        - special.gammaln(k + 1)
        - special.gammaln(k * alpha + beta),
    )


def majorant_terms(
    alpha: float, beta: float, delta: float, radius: float, count: int
) -> np.ndarray:
    """Terms c_k radius^k of the scalar majorant series."""
    terms = np.zeros(count)
    terms[0] = special.rgamma(beta)
    if radius > 0:
        k = np.arange(1, count)
        with np.errstate(over="ignore", under="ignore"):
            terms[1:] = np.exp(
                log_coefficients(alpha, beta, delta, count)[1:] + k * math.log(radius)
            )
    return terms


def _tail_estimate(magnitudes: np.ndarray, count: int) -> float:
    """Ratio test bound of sum_{k >= count} magnitudes[k]."""
    first = magnitudes[count]
    if first == 0:
        return 0.0
    ratio = magnitudes[count + 1] / first
    following = (
        magnitudes[count + 2] / magnitudes[count + 1] if magnitudes[count + 1] > 0 else 0.0
    )
    if ratio < 1 and following <= ratio:
        return float(first / (1 - ratio))
    return math.inf


def _truncation(
    magnitudes: np.ndarray, partial_sums: np.ndarray, tolerance: float
) -> t.Optional[t.Tuple[int, float]]:
    """Smallest number of terms satisfying the stopping rule, with its tail bound."""
    for count in range(2, magnitudes.size - 2):
        scale = tolerance * abs(partial_sums[count - 1])
        if not (
            magnitudes[count - 1] <= scale
            and magnitudes[count - 2] <= tolerance * abs(partial_sums[count - 2])
        ):
            continue
        tail = _tail_estimate(magnitudes, count)
        if tail <= scale:
            return count, tail
    return None


def _check_argument(radius: float) -> None:
    if not radius <= ARGUMENT_GUARD:
        raise ArgumentGuardError(radius, ARGUMENT_GUARD)


def series_length(q: MLQuery, radius: float) -> t.Tuple[int, float]:
    """Number of terms and tail bound of the majorant series at a given radius."""
    _check_argument(radius)
    magnitudes = majorant_terms(q.alpha, q.beta, q.delta, radius, q.max_terms)
    with np.errstate(over="ignore", invalid="ignore"):
        partial_sums = np.cumsum(magnitudes)
    cutoff = _truncation(magnitudes, partial_sums, q.tolerance)
    if cutoff is None:
        raise SeriesConvergenceError(q.max_terms, radius)
    return cutoff


def _extend_truncation(
    magnitudes: np.ndarray, count: int, target: float
) -> t.Tuple[int, float]:
    """Smallest number of terms, at least `count`, whose majorant tail is below target."""
    for extended in range(count, magnitudes.size - 2):
        tail = _tail_estimate(magnitudes, extended)
        if tail <= target:
            return extended, tail
    return count, math.inf


def _rounding_bound(count: int, absolute: float) -> float:
    """Rounding error bound of a double precision sum of `count` terms."""
    return ROUNDING_FACTOR * count * EPS * absolute


def _accuracy_scale(values: np.ndarray, tolerance: float) -> np.ndarray:
    """Smallest singular value of each matrix, floored at tolerance times the largest."""
    singular = np.linalg.svd(values, compute_uv=False)
    return t.cast(np.ndarray, np.maximum(singular[..., -1], tolerance * singular[..., 0]))


def _extended_sum(
    q: MLQuery, M: np.ndarray, magnitudes: np.ndarray, radius: float
) -> t.Tuple[np.ndarray, int, float, float]:
    """Sum the series of M in the current mpmath precision.

    Returns the value, the number of terms, the tail bound and the sum of the
    Frobenius norms of the terms.
    """
    n = M.shape[0]
    base = mpmath.matrix(M.tolist())
    power = mpmath.eye(n)
    total = mpmath.zeros(n, n)
    alpha = mpmath.mpf(q.alpha)
    absolute = 0.0
    for k in range(q.max_terms - 3):
        if k > 0:
            power = power * base
        coefficient = (
            mpmath.rf(q.delta, k) * mpmath.rgamma(k * alpha + q.beta) / mpmath.factorial(k)
        )
        term = power * coefficient
        total = total + term
        absolute += float(mpmath.mnorm(term, "F"))
        if k == 0:
            continue
        tail = _tail_estimate(magnitudes, k + 1)
        if tail > 0.5 * q.tolerance * float(mpmath.mnorm(total, "F")):
            continue
        value = np.array(total.tolist(), dtype=float)
        if tail <= 0.5 * q.tolerance * float(_accuracy_scale(value, q.tolerance)):
            return value, k + 1, tail, absolute
    raise SeriesConvergenceError(q.max_terms, radius)


def _extended_series(q: MLQuery, M: np.ndarray) -> MLMatrixValue:
    """Series of a square matrix summed with mpmath.

    The working precision starts at twice the number of digits of the
    majorant and grows until the rounding bound is below the tolerance.
    """
    radius = float(np.linalg.norm(M, 2))
    magnitudes = majorant_terms(q.alpha, q.beta, q.delta, radius, q.max_terms)
    with np.errstate(over="ignore"):
        majorant = float(np.sum(magnitudes))
    if not math.isfinite(majorant):
        raise SeriesConvergenceError(q.max_terms, radius)
    digits = 15 + 2 * max(0, math.ceil(math.log10(majorant)))
    while digits <= MAX_DIGITS:
        with mpmath.workdps(digits):
            value, count, tail, absolute = _extended_sum(q, M, magnitudes, radius)
            scale = float(_accuracy_scale(value, q.tolerance))
            rounding = ROUNDING_FACTOR * count * mpmath.mp.eps * absolute
            if scale > 0 and rounding <= 0.5 * q.tolerance * scale:
                return MLMatrixValue(value=value, terms_used=count, tail_bound=tail)
            missing = (
                int(mpmath.ceil(mpmath.log10(rounding / (0.5 * q.tolerance * scale))))
                if scale > 0
                else digits
            )
        digits += missing + 5
    raise SeriesConvergenceError(q.max_terms, radius)


def ml3_scalar(q: MLQuery, z: float) -> float:
    """Three-parameter Mittag-Leffler function of a real argument.

    Raises:
        ArgumentGuardError: when |z| > 50
        SeriesConvergenceError: when max_terms terms do not reach the tolerance
    """
    z = float(z)
    count, _ = series_length(q, abs(z))
    magnitudes = majorant_terms(q.alpha, q.beta, q.delta, abs(z), q.max_terms)
    terms = magnitudes.copy()
    if z < 0:
        terms[1::2] *= -1
    count, tail = _extend_truncation(
        magnitudes, count, q.tolerance * abs(math.fsum(terms[:count]))
    )
    value = math.fsum(terms[:count])
    rounding = _rounding_bound(count, math.fsum(magnitudes[:count]))
    if max(tail, rounding) <= q.tolerance * abs(value):
        return value
    logger.debug(f"Mittag-Leffler series at z={z} is summed in extended precision")
    return float(_extended_series(q, np.array([[z]])).value[0, 0])


def ml2_scalar(
    alpha: float,
    beta: float,
    z: float,
    tolerance: float = 1e-12,
    max_terms: int = 512,
) -> float:
    """Two-parameter Mittag-Leffler function E_{alpha,beta}(z)."""
    return ml3_scalar(MLQuery(alpha, beta, 1.0, tolerance, max_terms), z)


def ml1_scalar(
    alpha: float, z: float, tolerance: float = 1e-12, max_terms: int = 512
) -> float:
    """Classical Mittag-Leffler function E_alpha(z)."""
    return ml3_scalar(MLQuery(alpha, 1.0, 1.0, tolerance, max_terms), z)


def ml3_values(q: MLQuery, z: np.ndarray) -> np.ndarray:
    """Vectorized ml3_scalar over an array of real arguments.

    Every entry uses the number of terms required by the largest |z|. Entries
    failing the accuracy check are evaluated by `ml3_scalar`.
    """
    z = np.asarray(z, dtype=float)
    flat = z.reshape(-1)
    if flat.size == 0:
        return np.zeros(z.shape)
    radius = float(np.max(np.abs(flat)))
    count, tail = series_length(q, radius)
    log_c = log_coefficients(q.alpha, q.beta, q.delta, count)
    k = np.arange(count)
    magnitude = np.abs(flat)
    positive = magnitude > 0
    table = np.zeros((flat.size, count))
    table[:, 0] = special.rgamma(q.beta)
    if count > 1 and np.any(positive):
        with np.errstate(under="ignore"):
            table[positive, 1:] = np.exp(
                log_c[None, 1:] + k[None, 1:] * np.log(magnitude[positive])[:, None]
            )
        negative = flat < 0
        table[np.ix_(negative, k % 2 == 1)] *= -1
    values = np.sum(table, axis=1)
    ratio = magnitude / radius if radius > 0 else np.zeros(flat.size)
    with np.errstate(under="ignore"):
        tails = tail * ratio**count
    rounding = ROUNDING_FACTOR * count * EPS * np.sum(np.abs(table), axis=1)
    target = q.tolerance * np.abs(values)
    for index in np.flatnonzero((tails > target) | (rounding > target)):
        values[index] = ml3_scalar(q, float(flat[index]))
    return t.cast(np.ndarray, values.reshape(z.shape))


def _neumaier_add(
    total: np.ndarray, compensation: np.ndarray, term: np.ndarray
) -> t.Tuple[np.ndarray, np.ndarray]:
    updated = total + term
    compensation = compensation + np.where(
        np.abs(total) >= np.abs(term), (total - updated) + term, (term - updated) + total
    )
    return updated, compensation


def _square(M: np.ndarray) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"Mittag-Leffler matrix argument must be square, got {M.shape}")
    return M


def ml3_matrix(q: MLQuery, M: np.ndarray) -> MLMatrixValue:
    """Three-parameter Mittag-Leffler function of a square matrix.

    Powers of M are accumulated iteratively and summed with Neumaier
    compensation. The reported tail bound comes from the scalar majorant at
    the spectral norm of M. A sum failing the accuracy check is redone in
    extended precision.
    """
    M = _square(M)
    n = M.shape[0]
    if n == 0:
        return MLMatrixValue(value=np.zeros((0, 0)), terms_used=0, tail_bound=0.0)
    radius = float(np.linalg.norm(M, 2))
    _check_argument(radius)
    magnitudes = majorant_terms(q.alpha, q.beta, q.delta, radius, q.max_terms)
    log_c = log_coefficients(q.alpha, q.beta, q.delta, q.max_terms)
    total = np.zeros((n, n))
    compensation = np.zeros((n, n))
    term = special.rgamma(q.beta) * np.eye(n)
    term_norms: t.List[float] = []
    partial_norms: t.List[float] = []
    for k in range(q.max_terms - 3):
        if k > 0:
            term = (term @ M) * math.exp(log_c[k] - log_c[k - 1])
        total, compensation = _neumaier_add(total, compensation, term)
        term_norms.append(float(np.linalg.norm(term)))
        partial_norms.append(float(np.linalg.norm(total + compensation)))
        if not (
            k >= 1
            and term_norms[-1] <= q.tolerance * partial_norms[-1]
            and term_norms[-2] <= q.tolerance * partial_norms[-2]
        ):
            continue
        tail = _tail_estimate(magnitudes, k + 1)
        if tail > q.tolerance * partial_norms[-1]:
            continue
        value = total + compensation
        scale = float(_accuracy_scale(value, q.tolerance))
        if tail > q.tolerance * scale:
            continue
        if _rounding_bound(k + 1, math.fsum(term_norms)) <= q.tolerance * scale:
            return MLMatrixValue(value=value, terms_used=k + 1, tail_bound=tail)
        break
    logger.debug(
        f"Mittag-Leffler series of a matrix of norm {radius:.3g} is summed in extended precision"
    )
    return _extended_series(q, M)


def ml3_matrix_power(q: MLQuery, M: np.ndarray, times: np.ndarray) -> np.ndarray:
    """E^delta_{alpha,beta}(M t^alpha) for every t of a nonnegative array.

    Returns an array with shape (len(times), n, n). The powers of M are shared
    by all times and the series length is fixed by the largest argument.
    Times failing the accuracy check are evaluated by `ml3_matrix`.
    """
    M = _square(M)
    n = M.shape[0]
    times = np.asarray(times, dtype=float).reshape(-1)
    if np.any(times < 0):
        raise MathDomainError("Matrix Mittag-Leffler powers require nonnegative times")
    if times.size == 0 or n == 0:
        return np.zeros((times.size, n, n))
    norm = float(np.linalg.norm(M, 2))
    largest = float(np.max(times))
    count, tail = series_length(q, norm * largest**q.alpha)
    # terms c_k (M t_max^alpha)^k stay within the majorant range
    step = M * largest**q.alpha
    log_c = log_coefficients(q.alpha, q.beta, q.delta, count)
    terms = np.empty((count, n, n))
    terms[0] = special.rgamma(q.beta) * np.eye(n)
    for k in range(1, count):
        terms[k] = (terms[k - 1] @ step) * math.exp(log_c[k] - log_c[k - 1])
    table = np.zeros((times.size, count))
    table[:, 0] = 1.0
    positive = times > 0
    if count > 1 and np.any(positive):
        k = np.arange(1, count)
        with np.errstate(under="ignore"):
            table[positive, 1:] = np.exp(
                q.alpha * k[None, :] * np.log(times[positive] / largest)[:, None]
            )
    values = (table @ terms.reshape(count, n * n)).reshape(-1, n, n)
    ratio = times / largest if largest > 0 else np.zeros(times.size)
    with np.errstate(under="ignore"):
        tails = tail * ratio ** (q.alpha * count)
    term_norms = np.linalg.norm(terms.reshape(count, n * n), axis=1)
    rounding = ROUNDING_FACTOR * count * EPS * (table @ term_norms)
    target = q.tolerance * _accuracy_scale(values, q.tolerance)
    for index in np.flatnonzero((tails > target) | (rounding > target)):
        values[index] = ml3_matrix(q, M * times[index] ** q.alpha).value
    return t.cast(np.ndarray, values)
