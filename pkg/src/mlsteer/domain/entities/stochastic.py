import typing as t
from dataclasses import dataclass, field

import numpy as np

from ..errors import MathDomainError
from .mesh import MeshSpec

DiffusionFunction = t.Callable[[float, np.ndarray], np.ndarray]


@dataclass
class DiffusionSpec:
    """Noise coefficient Delta(t, x) of the stochastic system.

    `delta_fn(t, x)` receives a batch of states with shape (P, n) and returns
    either a batch of matrices with shape (P, n, d) or a single (n, d) matrix
    shared by all paths. An n-vector is read as an (n, 1) matrix.
    """

    kind: t.Literal["deterministic", "state_dependent"]
    """Deterministic coefficients ignore the state argument."""

    delta_fn: DiffusionFunction
    """Coefficient function."""

    lipschitz_const: float
    """Lipschitz constant L of Delta in the state variable."""

    sup_at_zero: float
    """Bound of ||Delta(t, 0)|| over [0, T]."""

    noise_dim: int = 1
    """Dimension d of the Brownian motion."""

    name: str = "custom"
    """Human readable name, used in reports."""

    def __post_init__(self) -> None:
        if self.kind not in ("deterministic", "state_dependent"):
            raise MathDomainError(f"Unknown diffusion kind: {self.kind}")
        if not self.lipschitz_const >= 0:
            raise MathDomainError(
                f"Lipschitz constant must be nonnegative, got {self.lipschitz_const}"
            )
        if not np.isfinite(self.sup_at_zero) or self.sup_at_zero < 0:
            raise MathDomainError(
                f"Bound of the diffusion at zero must be finite, got {self.sup_at_zero}"
            )
        if self.noise_dim < 1:
            raise MathDomainError(f"Noise dimension must be positive, got {self.noise_dim}")


@dataclass
class PathEnsemble:
    """Brownian increments and, once simulated, the state of every path.

    Times are uniform on [0, T]. The increments of path p only depend on
    (seed, p).
    """

    n_paths: int
    """Number of paths."""

    mesh: MeshSpec
    """Mesh which produced the time grid."""

    times: np.ndarray
    """Uniform grid t_0 = 0 < ... < t_N = T."""

    increments: np.ndarray
    """Brownian increments with shape (n_paths, N, d)."""

    seed: int
    """Master seed."""

    states: t.Optional[np.ndarray] = None
    """States with shape (n_paths, N + 1, n)."""

    scheme: t.Optional[str] = None
    """Scheme which filled the states: "mild" or "integral_form"."""

    @property
    def step(self) -> float:
        """Grid step."""
        return float(self.times[1] - self.times[0])

    @property
    def cells(self) -> int:
        """Number of grid cells N."""
        return int(self.increments.shape[1])


@dataclass
class ContractionReport:
    """Constants of the contraction argument in the weighted maximum norm."""

    gamma_weight: float
    """Weight parameter gamma of the norm sup_t E|x(t)|^2 / E_{2 alpha - 1}(gamma t^(2 alpha - 1))."""

    lambda_T: float
    """Gamma(2 alpha - 1) sum_k M_k^2 ||B||^(2k) T^(2k)."""

    M_k: t.List[float]
    """Maxima over [0, T] of E^{k+1}_{alpha,(k+1) alpha}(||A|| t^alpha)."""

    ratio: float
    """L^2 lambda_T / gamma."""

    contraction_ok: bool
    """True when ratio < 1."""

    diagnostics: t.List[str] = field(default_factory=list)
    """Warnings raised while computing the report."""


@dataclass
class PicardReport:
    """Distances between successive iterates of the mild solution map."""

    gamma_weight: float
    """Weight parameter of the norm in which distances are measured."""

    distances: t.List[float]
    """Weighted mean-square distance between iterates m and m + 1."""

    @property
    def ratios(self) -> t.List[float]:
        """Successive decay ratios; 0/0 counts as 0."""
        ratios = []
        for previous, current in zip(self.distances[:-1], self.distances[1:]):
            ratios.append(current / previous if previous > 0 else 0.0)
        return ratios
