import math

import numpy as np
import pytest
from scipy import stats

from ivmsmm.backend.utils.numerics import (
    ComplexSpectrum,
    NewtonConfig,
    NoConvergence,
    SingularInformation,
    SingularMatrix,
    eig2x2,
    newton_maximize,
    normal_cdf,
    normal_pdf,
    normal_ppf,
    solve_linear,
)


class TestNormal:
    @pytest.mark.parametrize("x", [-8.0, -1.3, 0.0, 0.4, 5.0])
    def test_matches_scipy(self, x):
        assert normal_cdf(x) == pytest.approx(stats.norm.cdf(x), rel=1e-12)
        assert normal_pdf(x) == pytest.approx(stats.norm.pdf(x), rel=1e-12)

    def test_reference_values(self):
        assert normal_cdf(0.0) == 0.5
        assert normal_cdf(1.959964) == pytest.approx(0.975, abs=1e-7)
        assert normal_pdf(1.0) == pytest.approx(0.2419707245, abs=1e-10)
        x = np.linspace(-6.0, 6.0, 25)
        np.testing.assert_allclose(normal_cdf(x) + normal_cdf(-x), 1.0, atol=1e-14)

    def test_ppf_inverts_cdf(self):
        p = np.array([1e-6, 0.025, 0.5, 0.975])
        np.testing.assert_allclose(normal_cdf(normal_ppf(p)), p, rtol=1e-10)
        assert normal_ppf(0.975) == pytest.approx(1.959963984540054)


class TestSolveLinear:
    def test_solves_vector_and_matrix(self):
        a = np.array([[4.0, 1.0], [2.0, 3.0]])
        b = np.array([1.0, 2.0])
        np.testing.assert_allclose(a @ solve_linear(a, b), b)
        rhs = np.eye(2)
        np.testing.assert_allclose(solve_linear(a, rhs), np.linalg.inv(a))

    def test_singular(self):
        with pytest.raises(SingularMatrix):
            solve_linear(np.array([[1.0, 2.0], [2.0, 4.0]]), np.ones(2))

    def test_near_singular_is_relative(self):
        a = np.array([[1e8, 0.0], [0.0, 1e-8]])
        with pytest.raises(SingularMatrix):
            solve_linear(a, np.ones(2))

    def test_zero_matrix(self):
        with pytest.raises(SingularMatrix):
            solve_linear(np.zeros((2, 2)), np.ones(2))


class TestEig2x2:
    def test_ordered_by_magnitude(self):
        lambda1, lambda2 = eig2x2(np.array([[0.5, 0.2], [0.3, -1.5]]))
        expected = sorted(np.linalg.eigvals([[0.5, 0.2], [0.3, -1.5]]).real, key=abs, reverse=True)
        assert lambda1 == pytest.approx(expected[0])
        assert lambda2 == pytest.approx(expected[1])

    def test_repeated_root(self):
        assert eig2x2(np.eye(2) * 3.0) == (3.0, 3.0)

    def test_complex_spectrum(self):
        with pytest.raises(ComplexSpectrum):
            eig2x2(np.array([[0.0, -1.0], [1.0, 0.0]]))


class TestNewton:
    def test_concave_quadratic(self):
        target = np.array([1.0, -2.0])
        theta = newton_maximize(
            lambda t: -np.sum((t - target) ** 2),
            lambda t: -2.0 * (t - target),
            lambda t: 2.0 * np.eye(2),
            np.zeros(2),
        )
        np.testing.assert_allclose(theta, target)

    def test_step_halving_on_log_likelihood(self):
        # Poisson log-likelihood in the log rate; a full step from 5 overshoots
        counts = 3.0

        def loglik(t):
            return counts * t[0] - math.exp(t[0])

        theta = newton_maximize(
            loglik,
            lambda t: np.array([counts - math.exp(t[0])]),
            lambda t: np.array([[math.exp(t[0])]]),
            np.array([5.0]),
        )
        assert theta[0] == pytest.approx(math.log(counts), abs=1e-9)

    def test_singular_information(self):
        with pytest.raises(SingularInformation):
            newton_maximize(lambda t: -t[0] ** 2, lambda t: np.array([-2 * t[0], 1.0]),
                            lambda t: np.zeros((2, 2)), np.array([1.0, 0.0]))

    def test_iteration_limit(self):
        with pytest.raises(NoConvergence):
            newton_maximize(
                lambda t: t[0], lambda t: np.array([1.0]), lambda t: np.array([[1e-3]]),
                np.zeros(1), NewtonConfig(max_iterations=3),
            )

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            NewtonConfig(tolerance=0.0)
