import typing as t

import mpmath
import numpy as np
import pytest
from _pytest.fixtures import SubRequest

from mlsteer.adapters.gateways.filesystem import TemporaryDirectory
from mlsteer.domain.entities import InitialFunction, MeshSpec, SystemSpec
from mlsteer.domain.gateways import OutputStorage


def constant_phi(value: t.Sequence[float]) -> InitialFunction:
    return InitialFunction("polynomial", coefficients=np.array(value, dtype=float)[:, None])


def mp_ml3(
    alpha: float, beta: float, delta: float, z: float, digits: int = 40, terms: int = 400
) -> float:
    """Reference value from the series in extended precision."""
    with mpmath.workdps(digits):
        total = mpmath.mpf(0)
        for k in range(terms):
            total += (
                mpmath.rf(delta, k)
                * mpmath.mpf(z) ** k
                / (mpmath.factorial(k) * mpmath.gamma(k * mpmath.mpf(alpha) + beta))
            )
        return float(total)


@pytest.fixture
def system(request: SubRequest) -> SystemSpec:
    """Create a system to use within tests.

    Defaults to the delayed exponential x'(t) = x(t - 1) with x = 1 on [-1, 0].
    """
    options: t.Dict[str, t.Any] = dict(
        A=[[0.0]], B=[[1.0]], h=1.0, alpha=1.0, T=2.0, phi=None
    )
    options.update(getattr(request, "param", {}))
    A = np.array(options.pop("A"), dtype=float)
    if options["phi"] is None:
        options["phi"] = constant_phi([1.0] * A.shape[0])
    return SystemSpec(A=A, B=np.array(options.pop("B"), dtype=float), **options)


@pytest.fixture
def mesh(request: SubRequest) -> MeshSpec:
    """Create a mesh to use within tests."""
    return MeshSpec(**getattr(request, "param", {"base_step": 1 / 64}))


@pytest.fixture
def output_storage(request: SubRequest) -> OutputStorage:
    """Create an output storage to use within tests."""
    param = getattr(request, "param", "temporary")
    if isinstance(param, tuple):
        kind, options = param
    else:
        kind = param
        options = {}
    if kind == "temporary":
        return TemporaryDirectory(**options)
    raise ValueError(f"Unknown output storage implementation: {kind}")
