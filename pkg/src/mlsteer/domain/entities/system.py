import typing as t
from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError, MathDomainError, OrderRangeError, PermutabilityError

COMMUTATION_TOLERANCE = 1e-10


def commutator_norm(A: np.ndarray, B: np.ndarray) -> float:
    """Spectral norm of AB - BA."""
    return float(np.linalg.norm(A @ B - B @ A, 2))


def commutation_threshold(A: np.ndarray, B: np.ndarray, tol: float) -> float:
    """Tolerance scaled by the size of the operands: tol * (1 + ||A|| ||B||)."""
    return tol * (1.0 + float(np.linalg.norm(A, 2)) * float(np.linalg.norm(B, 2)))


@dataclass
class InitialFunction:
    """Initial function entity.

    The history of the delay system on [-h, 0]. Only representations with an
    exact derivative are accepted: vector polynomials in t and cubic splines.
    """

    kind: t.Literal["polynomial", "spline"]
    """Representation kind."""

    coefficients: t.Optional[np.ndarray] = None
    """Polynomial coefficients with shape (n, degree + 1), ascending powers of t."""

    knots: t.Optional[np.ndarray] = None
    """Spline knots, strictly increasing, covering [-h, 0]."""

    values: t.Optional[np.ndarray] = None
    """Spline values at knots with shape (len(knots), n)."""

    def __post_init__(self) -> None:
        if self.kind == "polynomial":
            if self.coefficients is None:
                raise DimensionError("Polynomial initial function requires coefficients")
            coefficients = np.atleast_2d(np.asarray(self.coefficients, dtype=float))
            if coefficients.ndim != 2 or coefficients.shape[1] == 0:
                raise DimensionError(
                    f"Polynomial coefficients must have shape (n, degree + 1), got {coefficients.shape}"
                )
            self.coefficients = coefficients
        elif self.kind == "spline":
            if self.knots is None or self.values is None:
                raise DimensionError("Spline initial function requires knots and values")
            knots = np.asarray(self.knots, dtype=float)
            values = np.asarray(self.values, dtype=float)
            if values.ndim == 1:
                values = values[:, None]
            if knots.ndim != 1 or knots.size < 2 or values.shape[0] != knots.size:
                raise DimensionError(
                    f"Spline needs at least 2 knots and one value row per knot, got knots {knots.shape} and values {values.shape}"
                )
            if np.any(np.diff(knots) <= 0):
                raise MathDomainError("Spline knots must be strictly increasing")
            self.knots = knots
            self.values = values
        else:
            raise MathDomainError(f"Unknown initial function kind: {self.kind}")

    @property
    def dimension(self) -> int:
        """Dimension of the state."""
        if self.kind == "polynomial":
            return int(t.cast(np.ndarray, self.coefficients).shape[0])
        return int(t.cast(np.ndarray, self.values).shape[1])


@dataclass
class SystemSpec:
    """Fractional delay system entity.

    Holds the tuple (A, B, C, h, alpha, T, phi) of

        ^C D^alpha x(t) = A x(t) + B x(t - h) + C u(t),   x = phi on [-h, 0].

    A and B must be permutable. C defaults to the identity when the system is
    never controlled.
    """

    A: np.ndarray
    """Square matrix acting on the current state."""

    B: np.ndarray
    """Square matrix acting on the delayed state."""

    h: float
    """Constant delay, strictly positive."""

    alpha: float
    """Fractional order in (0, 1]."""

    T: float
    """Time horizon, strictly positive."""

    phi: InitialFunction
    """Initial function on [-h, 0]."""

    C: t.Optional[np.ndarray] = None
    """Control matrix with shape (n, m), m <= n."""

    commutation_tol: float = COMMUTATION_TOLERANCE
    """Relative tolerance of the permutability check."""

    commutator: float = field(init=False, default=0.0)
    """Observed commutator norm ||AB - BA||."""

    def __post_init__(self) -> None:
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DimensionError(f"A must be square, got shape {A.shape}")
        if B.shape != A.shape:
            raise DimensionError(
                f"B must have the same shape as A, got {B.shape} and {A.shape}"
            )
        n = A.shape[0]
        if self.C is None:
            C = np.eye(n)
        else:
            C = np.asarray(self.C, dtype=float)
            if C.ndim == 1:
                C = C[:, None]
        if C.ndim != 2 or C.shape[0] != n or C.shape[1] > n:
            raise DimensionError(f"C must have shape (n, m) with m <= n={n}, got {C.shape}")
        if not self.h > 0:
            raise MathDomainError(f"Delay h must be positive, got {self.h}")
        if not self.T > 0:
            raise MathDomainError(f"Horizon T must be positive, got {self.T}")
        if not 0 < self.alpha <= 1:
            raise OrderRangeError(self.alpha, 0, 1, "deterministic fractional systems")
        if self.phi.dimension != n:
            raise DimensionError(
                f"Initial function has dimension {self.phi.dimension}, expected {n}"
            )
        if self.phi.kind == "spline":
            knots = t.cast(np.ndarray, self.phi.knots)
            if knots[0] > -self.h + 1e-12 * self.h or knots[-1] < -1e-12 * self.h:
                raise MathDomainError(
                    f"Spline knots [{knots[0]}, {knots[-1]}] do not cover [-h, 0] with h={self.h}"
                )
        self.A, self.B, self.C = A, B, C
        self.h, self.alpha, self.T = float(self.h), float(self.alpha), float(self.T)
        self.commutator = commutator_norm(A, B)
        threshold = commutation_threshold(A, B, self.commutation_tol)
        if self.commutator > threshold:
            raise PermutabilityError(self.commutator, threshold)

    @property
    def dimension(self) -> int:
        """State dimension n."""
        return int(self.A.shape[0])

    @property
    def inputs(self) -> int:
        """Control dimension m."""
        return int(t.cast(np.ndarray, self.C).shape[1])


def require_stochastic_order(spec: SystemSpec) -> None:
    """Stochastic operations need alpha in (1/2, 1] for a square integrable kernel."""
    if not 0.5 < spec.alpha <= 1:
        raise OrderRangeError(spec.alpha, 0.5, 1, "stochastic systems")
