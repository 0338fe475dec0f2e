import typing as t
from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError, MathDomainError
from .mesh import MeshSpec
from .stochastic import DiffusionSpec, PathEnsemble
from .system import SystemSpec

SteeringMode = t.Literal["linear", "nonlinear_causal", "nonlinear_picard"]


@dataclass
class ControllabilityReport:
    """Controllability of a fractional delay system on [0, T].

    The Grammian test and the rank test are equivalent for permutable
    matrices, both are reported so that they can be cross-checked.
    """

    horizon: float
    """Time T at which the Grammian is computed."""

    grammian: np.ndarray
    """Symmetric positive semidefinite Grammian."""

    min_eig: float
    """Smallest eigenvalue of the Grammian."""

    eig_threshold: float
    """Eigenvalues above this threshold count as positive (1e-8 trace / n)."""

    coercivity_gamma: float
    """Coercivity constant, equal to min_eig."""

    h_matrix_rank: int
    """Numerical rank of [A^i B^j C], i, j = 0..n-1."""

    h_matrix_cols: int
    """Number of columns of the rank matrix."""

    controllable: bool
    """True when min_eig > eig_threshold."""

    char_poly: t.List[float]
    """Characteristic polynomial of A, leading coefficient first."""

    cayley_hamilton_residual: float
    """Spectral norm of p(A)."""


@dataclass
class SteeringProblem:
    """Request to steer the stochastic system to a target state at time T."""

    target: np.ndarray
    """Target state x1."""

    spec: SystemSpec
    """Controlled system."""

    diff: DiffusionSpec
    """Noise coefficient."""

    mesh: MeshSpec
    """Simulation mesh."""

    mode: SteeringMode = "linear"
    """Evaluation strategy of the control law."""

    picard_tolerance: float = 1e-12
    """Stopping threshold on the mean-square gap between Picard iterates."""

    picard_max_iterations: int = 50
    """Iteration cap of the Picard mode."""

    def __post_init__(self) -> None:
        target = np.asarray(self.target, dtype=float).reshape(-1)
        if target.size != self.spec.dimension:
            raise DimensionError(
                f"Target has dimension {target.size}, expected {self.spec.dimension}"
            )
        if not np.all(np.isfinite(target)):
            raise MathDomainError("Target state must be finite")
        if self.mode == "linear" and self.diff.kind != "deterministic":
            raise MathDomainError(
                "Linear steering requires a deterministic diffusion, use a nonlinear mode instead"
            )
        if self.mode not in ("linear", "nonlinear_causal", "nonlinear_picard"):
            raise MathDomainError(f"Unknown steering mode: {self.mode}")
        self.mesh.resolve_delay(self.spec.h)
        self.target = target


@dataclass
class ControlLaw:
    """Piecewise constant control on the cells of the simulation grid."""

    times: np.ndarray
    """Left nodes t_0 .. t_{N-1} of the cells."""

    values: np.ndarray
    """Control values with shape (P, N, m)."""

    step: float
    """Cell length."""

    per_path: bool
    """True when the control depends on the observed noise."""

    @property
    def energy(self) -> np.ndarray:
        """Per path energy sum_k |u_k|^2 dt."""
        return t.cast(np.ndarray, np.sum(self.values**2, axis=(1, 2)) * self.step)


@dataclass
class HypothesisConstants:
    """Constants of the nonlinear steering hypotheses."""

    M: float
    """Supremum over [0, T] of the fundamental delayed matrix norm."""

    N: float
    """Supremum over [0, T] of the delayed perturbation norm."""

    K: float
    """Initial function ratio |phi(0) - phi(-h)| / |phi(-h)|."""

    k1: float
    """Squared norm of the Grammian inverse."""

    L_adjoint: float
    """Upper bound N |C| sqrt(T) of the adjoint control operator norm."""

    lam: float
    """16 N^2 |C|^2 |L*|^2 k1, must be below 1."""

    rho: float
    """N^2 L^2 T, must be below 1."""

    C1: float
    C2: float

    K_floored: bool = False
    """True when |phi(-h)| vanished and the ratio used the floor."""

    @property
    def lambda_ok(self) -> bool:
        return self.lam < 1

    @property
    def rho_ok(self) -> bool:
        return self.rho < 1


@dataclass
class SteeringResult:
    """Outcome of a steering computation."""

    law: ControlLaw
    """Applied control."""

    ensemble: PathEnsemble
    """Controlled paths."""

    target: np.ndarray
    """Target state."""

    iterations: int = 0
    """Picard iterations performed (0 for single pass modes)."""

    gaps: t.List[float] = field(default_factory=list)
    """Mean-square gaps between successive Picard iterates."""

    converged: bool = True
    """False when the Picard mode stopped at its iteration cap."""

    diagnostics: t.List[str] = field(default_factory=list)
    """Warnings raised while steering."""

    @property
    def terminal_error(self) -> np.ndarray:
        """Per path |x(T) - x1|^2."""
        states = t.cast(np.ndarray, self.ensemble.states)
        return t.cast(np.ndarray, np.sum((states[:, -1, :] - self.target) ** 2, axis=1))

    @property
    def ratios(self) -> t.List[float]:
        ratios = []
        for previous, current in zip(self.gaps[:-1], self.gaps[1:]):
            ratios.append(current / previous if previous > 0 else 0.0)
        return ratios
