import mpmath
import numpy as np
import pytest
from scipy import special

from mlsteer.domain.entities import InitialFunction, MeshSpec, SteeringProblem, SystemSpec
from mlsteer.domain.errors import PicardConvergenceError, SingularGrammianError
from mlsteer.domain.operations.control import (
    cayley_hamilton_residual,
    char_poly,
    coercivity_check,
    control_energy,
    grammian,
    grammian_matrix,
    grammian_profile,
    hypothesis_constants,
    kalman_rank,
    steer,
)
from mlsteer.domain.operations.diffusions import (
    constant_diffusion,
    linear_state_diffusion,
    zero_diffusion,
)
from mlsteer.domain.operations.sde_sim import kernel_tables, sample_brownian
from tests.conftest import constant_phi

MESH = MeshSpec(1 / 64)


def system(A, B, C=None, alpha=0.75, h=0.5, T=1.0, phi=None) -> SystemSpec:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    return SystemSpec(
        A=A,
        B=np.atleast_2d(np.asarray(B, dtype=float)),
        C=None if C is None else np.asarray(C, dtype=float),
        h=h,
        alpha=alpha,
        T=T,
        phi=phi or constant_phi([1.0] * A.shape[0]),
    )


def mp_kernel(a: float, b: float, alpha: float, h: float, tau):
    """Scalar delayed perturbation kernel in extended precision."""
    total = mpmath.mpf(0)
    k = 0
    while tau - k * h > 0:
        s = tau - k * h
        series = mpmath.mpf(0)
        for j in range(80):
            series += (
                mpmath.rf(k + 1, j)
                * (a * s**alpha) ** j
                / (mpmath.factorial(j) * mpmath.gamma(j * alpha + (k + 1) * alpha))
            )
        total += s ** ((k + 1) * alpha - 1) * b**k * series
        k += 1
    return total


class TestRankTest:
    def test_char_poly(self):
        assert char_poly(np.array([[0.0, 1.0], [0.0, 0.0]])).tolist() == [1.0, 0.0, 0.0]
        assert np.allclose(char_poly(np.diag([1.0, 2.0])), [1.0, -3.0, 2.0])

    def test_cayley_hamilton(self):
        rng = np.random.default_rng(3)
        for n in range(1, 6):
            A = rng.normal(size=(n, n))
            residual = cayley_hamilton_residual(A, char_poly(A))
            assert residual <= 1e-8 * (1 + np.linalg.norm(A, 2)) ** n

    def test_controllable_pair(self):
        spec = system([[0.0, 1.0], [0.0, 0.0]], np.zeros((2, 2)), C=[[0.0], [1.0]])
        matrix, rank = kalman_rank(spec)
        assert rank == 2
        assert matrix.shape == (2, 4)

    def test_uncontrollable_pair(self):
        spec = system([[0.0, 1.0], [0.0, 0.0]], np.zeros((2, 2)), C=[[1.0], [0.0]])
        assert kalman_rank(spec)[1] == 1


class TestGrammian:
    @pytest.mark.parametrize("alpha", [0.6, 0.75, 0.9])
    def test_closed_form_without_coefficients(self, alpha: float):
        spec = system(np.zeros((2, 2)), np.zeros((2, 2)), alpha=alpha, T=1.5)
        expected = 1.5 ** (2 * alpha - 1) / ((2 * alpha - 1) * special.gamma(alpha) ** 2)
        assert np.allclose(grammian_matrix(spec, MESH), expected * np.eye(2), rtol=1e-6)

    def test_first_order_limit(self):
        spec = system(np.zeros((2, 2)), np.zeros((2, 2)), alpha=1.0, T=1.5)
        assert np.allclose(grammian_matrix(spec, MESH), 1.5 * np.eye(2), rtol=1e-12)

    def test_extended_precision_oracle(self):
        a, b, alpha, h, T = -0.5, 0.3, 0.75, 0.5, 1.0
        spec = system(a, b, alpha=alpha, h=h, T=T)
        with mpmath.workdps(20):
            expected = mpmath.quad(
                lambda tau: mp_kernel(a, b, alpha, h, tau) ** 2, [0, h, T]
            )
        assert grammian_matrix(spec, MESH)[0, 0] == pytest.approx(float(expected), rel=1e-5)

    def test_report(self):
        spec = system([[0.0, 1.0], [0.0, 0.0]], np.zeros((2, 2)), C=[[0.0], [1.0]])
        report = grammian(spec, MESH)
        assert report.controllable
        assert report.h_matrix_rank == 2
        assert report.min_eig > report.eig_threshold
        assert report.char_poly == [1.0, 0.0, 0.0]
        assert np.allclose(report.grammian, report.grammian.T)
        assert coercivity_check(report) == (report.min_eig, True)

    def test_rank_and_grammian_tests_agree(self):
        rng = np.random.default_rng(11)
        disagreements = 0
        for trial in range(50):
            n = int(rng.integers(1, 4))
            A = rng.normal(scale=0.5, size=(n, n))
            B = rng.normal(scale=0.2) * A
            if trial % 3 == 0:
                # the first coordinate receives no control
                A = np.diag(rng.uniform(-1, 1, size=n))
                B = 0.3 * A
                C = np.ones((n, 1))
                C[0] = 0.0
            else:
                C = rng.normal(size=(n, 1))
            spec = system(A, B, C=C)
            report = grammian(spec, MESH)
            disagreements += report.controllable != (report.h_matrix_rank == n)
        assert disagreements == 0

    def test_profile_grows_with_horizon(self):
        spec = system(np.zeros((1, 1)), np.zeros((1, 1)))
        profile = grammian_profile(spec, MESH, [0.5, 1.0, 2.0])
        assert profile[0] < profile[1] < profile[2]


class TestLinearSteering:
    def test_deterministic_steering_is_exact(self):
        spec = system(-0.5, 0.3)
        prob = SteeringProblem(np.array([2.0]), spec, zero_diffusion(1), MESH)
        result = steer(prob, sample_brownian(MESH, 3, 0, spec.T))
        assert np.sqrt(np.max(result.terminal_error)) <= 1e-8
        assert not result.law.per_path
        assert result.law.values.shape == (3, 64, 1)

    def test_deterministic_steering_with_single_input(self):
        A = np.array([[-0.2, 1.0], [0.0, -0.2]])
        spec = system(A, 0.2 * A, C=[[0.0], [1.0]])
        prob = SteeringProblem(np.array([1.0, -1.0]), spec, zero_diffusion(2), MESH)
        result = steer(prob, sample_brownian(MESH, 2, 0, spec.T))
        assert np.sqrt(np.max(result.terminal_error)) <= 1e-8

    def test_terminal_residual_is_last_cell_noise(self):
        spec = system(-0.5, 0.3)
        prob = SteeringProblem(np.array([2.0]), spec, constant_diffusion(0.3, 1), MESH)
        ens = sample_brownian(MESH, 50, 1, spec.T)
        result = steer(prob, ens)
        weight = kernel_tables(spec, ens.cells, ens.step).stochastic[0, 0, 0]
        residual = result.ensemble.states[:, -1, 0] - 2.0
        assert np.allclose(residual, weight * 0.3 * ens.increments[:, -1, 0], atol=1e-10)
        assert result.law.per_path

    def test_controls_are_adapted(self):
        spec = system(-0.5, 0.3)
        prob = SteeringProblem(np.array([2.0]), spec, constant_diffusion(0.3, 1), MESH)
        ens = sample_brownian(MESH, 5, 2, spec.T)
        perturbed = sample_brownian(MESH, 5, 2, spec.T)
        perturbed.increments[:, 10:] = 0.0
        first = steer(prob, ens).law.values
        second = steer(prob, perturbed).law.values
        assert np.array_equal(first[:, :11], second[:, :11])
        assert not np.array_equal(first, second)

    def test_energy(self):
        spec = system(-0.5, 0.3)
        prob = SteeringProblem(np.array([2.0]), spec, zero_diffusion(1), MESH)
        law = steer(prob, sample_brownian(MESH, 2, 0, spec.T)).law
        assert np.allclose(control_energy(law), np.sum(law.values**2, axis=(1, 2)) / 64)

    def test_uncontrollable_system(self):
        spec = system(-0.5, 0.3, C=[[0.0]])
        prob = SteeringProblem(np.array([2.0]), spec, zero_diffusion(1), MESH)
        with pytest.raises(SingularGrammianError, match="singular"):
            steer(prob, sample_brownian(MESH, 2, 0, spec.T))


class TestNonlinearSteering:
    def problem(self, sigma: float, mode: str, **kwargs) -> SteeringProblem:
        spec = system(-0.5, 0.3)
        return SteeringProblem(
            np.array([2.0]), spec, linear_state_diffusion(sigma, 1), MESH, mode=mode, **kwargs
        )

    def test_picard_fixed_point_is_causal_solution(self):
        ens = sample_brownian(MESH, 8, 3, 1.0)
        causal = steer(self.problem(0.2, "nonlinear_causal"), ens)
        picard = steer(self.problem(0.2, "nonlinear_picard"), ens)
        assert picard.converged
        assert picard.iterations == len(picard.gaps)
        assert np.allclose(picard.ensemble.states, causal.ensemble.states, atol=1e-5)
        assert np.allclose(picard.law.values, causal.law.values, atol=1e-4)

    def test_causal_terminal_error_is_on_the_linear_scale(self):
        """sigma x near the target 2 acts like the constant coefficient 2 sigma."""
        ens = sample_brownian(MESH, 50, 1, 1.0)
        causal = steer(self.problem(0.3, "nonlinear_causal"), ens)
        linear = steer(
            SteeringProblem(np.array([2.0]), system(-0.5, 0.3), constant_diffusion(0.6, 1), MESH),
            ens,
        )
        assert 0 < np.mean(causal.terminal_error) <= 2 * np.mean(linear.terminal_error)

    def test_picard_ratios_are_bounded_by_contraction_constant(self):
        prob = self.problem(0.2, "nonlinear_picard")
        result = steer(prob, sample_brownian(MESH, 8, 3, 1.0))
        rho = hypothesis_constants(prob).rho
        assert result.converged
        assert len(result.ratios) >= 2
        assert all(ratio <= rho + 0.1 for ratio in result.ratios[1:])

    def test_non_contractive_iteration_is_reported(self):
        ens = sample_brownian(MESH, 4, 3, 1.0)
        result = steer(self.problem(5.0, "nonlinear_picard", picard_max_iterations=3), ens)
        assert not result.converged
        assert any(d.startswith("non_contractive") for d in result.diagnostics)

    def test_contractive_iteration_must_converge(self):
        ens = sample_brownian(MESH, 4, 3, 1.0)
        prob = self.problem(
            0.2, "nonlinear_picard", picard_max_iterations=1, picard_tolerance=1e-30
        )
        with pytest.raises(PicardConvergenceError, match="within 1 iterations"):
            steer(prob, ens)

    def test_hypothesis_constants(self):
        spec = system(0.0, 0.0, alpha=1.0, h=1.0, T=1.0)
        prob = SteeringProblem(
            np.array([1.0]), spec, linear_state_diffusion(0.5, 1), MESH, mode="nonlinear_causal"
        )
        constants = hypothesis_constants(prob)
        assert constants.N == pytest.approx(1.0)
        assert constants.M == pytest.approx(1.0)
        assert constants.lam == pytest.approx(16.0, rel=1e-10)
        assert constants.rho == pytest.approx(0.25)
        assert constants.K == 0.0
        assert constants.C1 == pytest.approx(20.0, rel=1e-10)
        assert constants.C2 == pytest.approx(1.0)
        assert not constants.lambda_ok
        assert constants.rho_ok

    def test_vanishing_history_floor(self):
        phi = InitialFunction("polynomial", coefficients=np.array([[1.0, 1.0]]))
        spec = system(0.0, 0.0, alpha=1.0, h=1.0, phi=phi)
        prob = SteeringProblem(
            np.array([1.0]), spec, linear_state_diffusion(0.5, 1), MESH, mode="nonlinear_causal"
        )
        assert hypothesis_constants(prob).K_floored
