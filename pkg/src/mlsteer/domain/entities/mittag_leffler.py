import typing as t
from dataclasses import dataclass, field

import numpy as np

from ..errors import MathDomainError

DEFAULT_TOLERANCE = 1e-12
DEFAULT_MAX_TERMS = 512


@dataclass(frozen=True)
class MLQuery:
    """Parameters of a three-parameter Mittag-Leffler evaluation.

    E^delta_{alpha,beta}(z) = sum_k (delta)_k z^k / (k! Gamma(k alpha + beta))
    """

    alpha: float
    """Order, strictly positive."""

    beta: float
    """Second parameter, strictly positive."""

    delta: float = 1.0
    """Third parameter, at least 1."""

    tolerance: float = DEFAULT_TOLERANCE
    """Relative truncation tolerance."""

    max_terms: int = DEFAULT_MAX_TERMS
    """Maximum number of series terms."""

    def __post_init__(self) -> None:
        problems: t.List[str] = []
        if not self.alpha > 0:
            problems.append(f"alpha must be positive, got {self.alpha}")
        if not self.beta > 0:
            problems.append(f"beta must be positive, got {self.beta}")
        if not self.delta >= 1:
            problems.append(f"delta must be at least 1, got {self.delta}")
        if not self.tolerance > 0:
            problems.append(f"tolerance must be positive, got {self.tolerance}")
        if self.max_terms < 16:
            problems.append(f"max_terms must be at least 16, got {self.max_terms}")
        if problems:
            raise MathDomainError("Invalid Mittag-Leffler query: " + "; ".join(problems))


@dataclass
class MLMatrixValue:
    """Value of a matrix Mittag-Leffler function with truncation metadata."""

    value: np.ndarray
    """Square matrix value."""

    terms_used: int
    """Number of series terms summed."""

    tail_bound: float
    """Majorant estimate of the truncation residual in operator norm."""


@dataclass
class DelayedMLEval:
    """Point evaluation of a delayed Mittag-Leffler matrix function."""

    value: np.ndarray
    """Matrix value."""

    t: float
    """Evaluation time."""

    segment_index: int
    """Index n of the delay segment ((n - 1) h, n h] containing t."""

    terms: t.List[float] = field(default_factory=list)
    """Operator norm of each segment term, for diagnostics."""

    near_singularity: bool = False
    """True when t sits close to a segment start where a negative power blows up."""


@dataclass
class LemmaReport:
    """Numeric check of the weighted Mittag-Leffler inequality.

    For each t the left hand side

        gamma / Gamma(2 alpha - 1) int_0^t (t - s)^(2 alpha - 2) E_{2 alpha - 1}(gamma s^(2 alpha - 1)) ds

    is compared with E_{2 alpha - 1}(gamma t^(2 alpha - 1)).
    """

    gamma: float
    alpha: float
    times: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray

    @property
    def max_violation(self) -> float:
        """Largest amount by which the left hand side exceeds the right hand side."""
        if self.times.size == 0:
            return 0.0
        return float(max(0.0, np.max(self.lhs - self.rhs)))

    @property
    def gaps(self) -> np.ndarray:
        """RHS - LHS, equal to 1 in exact arithmetic."""
        return t.cast(np.ndarray, self.rhs - self.lhs)
