import numpy as np
import pytest
from scipy import special

from mlsteer.domain.entities import MLQuery, SystemSpec
from mlsteer.domain.errors import MeshError, OrderRangeError, PermutabilityError
from mlsteer.domain.operations.delayed_ml import (
    DelayedMLEvaluator,
    caputo_l1_derivative,
    check_permutable,
    convolution_kernel,
    delayed_ml_fundamental,
    delayed_ml_perturbed,
    fundamental_values,
    ml_norm_bound,
    perturbed_values,
    segment_index,
    sup_norm,
)
from mlsteer.domain.operations.detsolver import observed_order
from mlsteer.domain.operations.specfun import ml1_scalar, ml3_scalar
from tests.conftest import constant_phi, mp_ml3
from tests.utils import parametrize_system


def scalar_system(a: float, b: float, alpha: float, h: float = 1.0, T: float = 3.0):
    return SystemSpec(
        A=np.array([[a]]), B=np.array([[b]]), h=h, alpha=alpha, T=T, phi=constant_phi([1.0])
    )


class TestSegments:
    def test_boundaries_belong_to_lower_segment(self):
        assert segment_index(1.0, 1.0) == 1
        assert segment_index(2.0, 1.0) == 2
        assert segment_index(0.0, 1.0) == 0
        assert segment_index(1.0 + 1e-9, 1.0) == 2

    def test_check_permutable(self):
        A = np.array([[1.0, 2.0], [0.0, 1.0]])
        assert check_permutable(A, 3 * A + np.eye(2)) == pytest.approx(0.0, abs=1e-14)

    def test_check_permutable_rejects_non_commuting_matrices(self):
        with pytest.raises(PermutabilityError, match="commutator norm"):
            check_permutable(np.array([[0.0, 1.0], [0.0, 0.0]]), np.array([[0.0, 0.0], [1.0, 0.0]]))


class TestFundamentalMatrix:
    @parametrize_system()
    def test_delayed_exponential(self, system: SystemSpec):
        values = fundamental_values(system, np.array([0.5, 1.0, 1.5, 2.0]))
        assert np.allclose(values[:, 0, 0], [1.5, 2.0, 2.625, 3.5], rtol=1e-13)

    @parametrize_system()
    def test_identity_on_history_and_zero_before(self, system: SystemSpec):
        values = fundamental_values(system, np.array([-1.5, -1.0, -0.5, 0.0]))
        assert values[:, 0, 0].tolist() == [0.0, 1.0, 1.0, 1.0]

    def test_reduces_to_mittag_leffler_without_delayed_term(self):
        spec = scalar_system(-0.7, 0.0, 0.8, h=0.5, T=2.0)
        times = np.linspace(0.05, 2.0, 40)
        expected = [ml1_scalar(0.8, -0.7 * time**0.8) for time in times]
        assert np.allclose(fundamental_values(spec, times)[:, 0, 0], expected, rtol=1e-12)

    def test_strongly_damped_system(self):
        spec = scalar_system(-8.0, 0.0, 0.8, h=0.5, T=2.0)
        times = np.linspace(0.05, 2.0, 20)
        expected = [mp_ml3(0.8, 1.0, 1.0, -8.0 * time**0.8, digits=50) for time in times]
        assert np.allclose(fundamental_values(spec, times)[:, 0, 0], expected, rtol=1e-9, atol=0)

    def test_point_evaluation(self):
        spec = scalar_system(0.0, 1.0, 1.0, T=2.0)
        result = delayed_ml_fundamental(spec, 1.5)
        assert result.value[0, 0] == pytest.approx(2.625, rel=1e-13)
        assert result.segment_index == 2
        assert len(result.terms) == 2
        assert not result.near_singularity

    def test_fractional_equation_residual(self):
        """The L1 residual of the delay equation decreases under refinement."""
        spec = scalar_system(-0.5, 0.3, 0.75, h=1.0, T=2.0)
        end = 1.5
        residuals = []
        for cells in (250, 500, 1000):
            step = end / cells
            times = np.linspace(0.0, end, cells + 1)
            samples = fundamental_values(spec, times)[:, 0, 0]
            derivative = caputo_l1_derivative(samples, spec.alpha, step)
            delayed = fundamental_values(spec, np.array([end - spec.h]))[0, 0, 0]
            residuals.append(abs(float(derivative) - (-0.5 * samples[-1] + 0.3 * delayed)))
        assert residuals[0] > residuals[1] > residuals[2]
        assert observed_order(residuals)[-1] >= 0.8

    def test_fractional_equation_residual_of_a_matrix_system(self):
        A = np.array([[-0.5, 0.2], [0.1, -0.4]])
        B = 0.3 * A + 0.1 * np.eye(2)
        spec = SystemSpec(A=A, B=B, h=1.0, alpha=0.75, T=2.0, phi=constant_phi([1.0, 1.0]))
        end = 1.5
        residuals = []
        for cells in (250, 500, 1000):
            times = np.linspace(0.0, end, cells + 1)
            samples = fundamental_values(spec, times)
            derivative = caputo_l1_derivative(samples, spec.alpha, end / cells)
            delayed = fundamental_values(spec, np.array([end - spec.h]))[0]
            residuals.append(
                float(np.linalg.norm(derivative - (A @ samples[-1] + B @ delayed), 2))
            )
        assert residuals[0] > residuals[1] > residuals[2]
        assert observed_order(residuals)[-1] >= 0.8


class TestDelayedPerturbation:
    def test_reduces_to_mittag_leffler_without_delayed_term(self):
        spec = scalar_system(0.4, 0.0, 0.7, h=0.5)
        beta = 1.3
        times = np.linspace(-0.4, 2.0, 25)
        expected = [
            (time + 0.5) ** (beta - 1) * ml3_scalar(MLQuery(0.7, beta), 0.4 * (time + 0.5) ** 0.7)
            for time in times
        ]
        assert np.allclose(perturbed_values(spec, beta, times)[:, 0, 0], expected, rtol=1e-12)

    def test_regular_kernel_without_coefficients(self):
        spec = scalar_system(0.0, 0.0, 0.75)
        lags = np.array([0.1, 0.5, 1.5, 2.5])
        assert np.allclose(
            convolution_kernel(spec, lags, regular=True)[:, 0, 0], special.rgamma(0.75)
        )
        assert np.allclose(
            convolution_kernel(spec, lags)[:, 0, 0], lags**-0.25 * special.rgamma(0.75)
        )

    def test_flags_evaluation_close_to_segment_start(self):
        spec = scalar_system(0.2, 0.1, 0.8)
        result = delayed_ml_perturbed(spec, 0.8, -1.0 + 1e-10)
        assert result.near_singularity
        assert np.isfinite(result.value).all()

    def test_evaluator_caches_values(self):
        spec = scalar_system(0.2, 0.1, 0.8)
        evaluator = DelayedMLEvaluator(spec, "perturbed", beta=0.9)
        times = np.array([0.3, 1.2, 2.7])
        first = evaluator.values(times)
        second = evaluator.values(times[::-1])
        assert np.array_equal(first, second[::-1])
        assert evaluator.misses == 3
        assert evaluator.hits == 3
        assert evaluator(1.2)[0, 0] == first[1, 0, 0]

    def test_sup_norm_of_exponential(self):
        spec = scalar_system(0.0, 1.0, 1.0, T=2.0)
        assert sup_norm(spec, "fundamental") == pytest.approx(3.5, rel=1e-12)


class TestNormBound:
    def test_segment_straddling_example(self):
        spec = scalar_system(0.2, 0.1, 0.8, h=1.0)
        value = abs(perturbed_values(spec, 0.8, np.array([1.3]))[0, 0, 0])
        assert value <= ml_norm_bound(spec, 0.8, 1.3) + 1e-10

    def test_bound_at_a_single_time_is_not_a_majorant(self):
        """Evaluating every term at t misses the k = 0 term, which lives at t + h."""
        a, b, alpha, beta, time = 0.2, 0.1, 0.8, 0.8, 1.3
        spec = scalar_system(a, b, alpha, h=1.0)
        value = abs(perturbed_values(spec, beta, np.array([time]))[0, 0, 0])
        naive = sum(
            time ** (k * alpha + beta - 1)
            * b**k
            * ml3_scalar(MLQuery(alpha, k * alpha + beta, k + 1), a * time**alpha)
            for k in range(3)
        )
        assert naive < value - 1e-3
        assert ml_norm_bound(spec, beta, time) >= value

    def test_random_permutable_pairs(self):
        rng = np.random.default_rng(2024)
        for _ in range(200):
            A = rng.normal(scale=0.5, size=(2, 2))
            B = rng.normal(scale=0.3) * np.eye(2) + rng.normal(scale=0.3) * A
            alpha = rng.uniform(0.5, 1.0)
            beta = rng.uniform(0.3, 1.5)
            h = rng.uniform(0.5, 1.5)
            time = rng.uniform(0.05, 3.0)
            spec = SystemSpec(
                A=A, B=B, h=h, alpha=alpha, T=3.0, phi=constant_phi([1.0, 1.0])
            )
            value = np.linalg.norm(perturbed_values(spec, beta, np.array([time]))[0], 2)
            assert value <= ml_norm_bound(spec, beta, time) + 1e-10


class TestCaputoDerivative:
    def test_linear_function(self):
        alpha = 0.6
        times = np.linspace(0.0, 1.0, 101)
        # the L1 scheme is exact on piecewise linear functions
        derivative = caputo_l1_derivative(times, alpha, 0.01)
        assert float(derivative) == pytest.approx(special.rgamma(2 - alpha), rel=1e-12)

    def test_constant_function(self):
        samples = np.full((50, 2, 2), 3.0)
        assert np.array_equal(caputo_l1_derivative(samples, 0.7, 0.02), np.zeros((2, 2)))

    def test_square_function(self):
        alpha, step = 0.75, 1e-3
        times = np.linspace(0.0, 1.0, 1001)
        derivative = caputo_l1_derivative(times**2, alpha, step)
        assert float(derivative) == pytest.approx(2 * special.rgamma(3 - alpha), rel=1e-3)

    def test_requires_three_samples(self):
        with pytest.raises(MeshError):
            caputo_l1_derivative(np.zeros(2), 0.5, 0.1)

    def test_requires_fractional_order(self):
        with pytest.raises(OrderRangeError):
            caputo_l1_derivative(np.zeros(5), 1.0, 0.1)
