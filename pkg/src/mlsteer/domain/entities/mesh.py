import typing as t
from dataclasses import dataclass

import numpy as np

from ..errors import MeshError

DEFAULT_GRADING = 2.0
DEFAULT_CELLS_PER_UNIT = 2048
DELAY_RESOLUTION = 8


@dataclass(frozen=True)
class MeshSpec:
    """Discretization parameters.

    The time grid is uniform with step at most `base_step`. Quadratures use
    `cells_per_unit` cells per unit time, graded as (j/N)^r toward singular
    endpoints where r is `grading_exponent`.
    """

    base_step: float
    """Time grid step."""

    grading_exponent: float = DEFAULT_GRADING
    """Grading exponent r >= 1 of quadrature meshes."""

    cells_per_unit: int = DEFAULT_CELLS_PER_UNIT
    """Quadrature cells per unit time."""

    def __post_init__(self) -> None:
        if not self.base_step > 0:
            raise MeshError(f"Mesh base step must be positive, got {self.base_step}")
        if not self.grading_exponent >= 1:
            raise MeshError(
                f"Grading exponent must be at least 1, got {self.grading_exponent}"
            )
        if self.cells_per_unit < 8:
            raise MeshError(
                f"At least 8 quadrature cells per unit time are required, got {self.cells_per_unit}"
            )

    def resolve_delay(self, h: float) -> None:
        """Raise MeshError unless the step resolves the delay, i.e. is at most h/8."""
        if self.base_step > h / DELAY_RESOLUTION * (1 + 1e-12):
            raise MeshError(
                f"Mesh base step {self.base_step} exceeds h/{DELAY_RESOLUTION:g} = {h / DELAY_RESOLUTION} for the delay h={h}"
            )

    def nodes(self, length: float) -> int:
        """Number of uniform grid cells covering an interval of given length."""
        count = round(length / self.base_step)
        if abs(count * self.base_step - length) > 1e-9 * max(length, 1.0):
            count = int(np.ceil(length / self.base_step))
        return max(int(count), 1)


@dataclass
class Trajectory:
    """Deterministic solution sampled on [-h, T]."""

    times: np.ndarray
    """Strictly increasing grid on [-h, T]; contains 0."""

    states: np.ndarray
    """States with shape (len(times), n)."""

    method: str
    """Name of the method which produced the trajectory."""

    mesh: t.Optional[MeshSpec] = None
    """Mesh used by the method."""

    @property
    def origin(self) -> int:
        """Index of t = 0 in the grid."""
        return int(np.argmin(np.abs(self.times)))

    def at(self, time: float) -> np.ndarray:
        """State at the grid node closest to the given time."""
        return t.cast(np.ndarray, self.states[int(np.argmin(np.abs(self.times - time)))])
