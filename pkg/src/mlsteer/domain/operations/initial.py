"""Evaluate initial functions and their derivatives on [-h, 0]."""
import typing as t

import numpy as np
from numpy.polynomial import polynomial
from scipy.interpolate import CubicSpline

from ..entities import InitialFunction


def _spline(phi: InitialFunction) -> CubicSpline:
    return CubicSpline(
        t.cast(np.ndarray, phi.knots), t.cast(np.ndarray, phi.values), axis=0
    )


def phi_values(phi: InitialFunction, times: np.ndarray) -> np.ndarray:
    """Values of the initial function with shape (len(times), n)."""
    times = np.asarray(times, dtype=float).reshape(-1)
    if phi.kind == "polynomial":
        coefficients = t.cast(np.ndarray, phi.coefficients)
        return t.cast(np.ndarray, polynomial.polyval(times, coefficients.T).T)
    return t.cast(np.ndarray, _spline(phi)(times))


def phi_derivative(phi: InitialFunction, times: np.ndarray) -> np.ndarray:
    """Exact derivative of the initial function with shape (len(times), n)."""
    times = np.asarray(times, dtype=float).reshape(-1)
    if phi.kind == "polynomial":
        coefficients = t.cast(np.ndarray, phi.coefficients)
        if coefficients.shape[1] == 1:
            return np.zeros((times.size, coefficients.shape[0]))
        derivative = polynomial.polyder(coefficients.T, axis=0)
        return t.cast(np.ndarray, polynomial.polyval(times, derivative).T)
    return t.cast(np.ndarray, _spline(phi)(times, 1))


def is_constant(phi: InitialFunction) -> bool:
    """True when the representation has an identically vanishing derivative."""
    if phi.kind == "polynomial":
        return not np.any(t.cast(np.ndarray, phi.coefficients)[:, 1:])
    values = t.cast(np.ndarray, phi.values)
    return bool(np.all(values == values[0]))
