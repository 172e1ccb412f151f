from dataclasses import replace

import numpy as np
import pytest

from ivmsmm.backend.analysis.markov_analysis import default_gamma
from ivmsmm.backend.estimation.estimators import EstimatorConfig, EstimatorKind, estimate, terminal_block
from ivmsmm.backend.estimation.inference import (
    InvalidArgument,
    TooManyFailures,
    analyze,
    bootstrap,
    influence_function,
    normal_intervals,
    sandwich_variance,
)
from ivmsmm.backend.estimation.nuisance import MarkovTreatmentModel, ProbitTreatmentModel
from ivmsmm.backend.estimation.weights import iv_stabilized_weights, iv_weights
from ivmsmm.backend.models.panel import LongitudinalPanel, MsmmSpec
from ivmsmm.backend.simulation.linear import LinearDgp, LinearDgpParams
from ivmsmm.backend.simulation.markov import MarkovDgp, MarkovDgpParams

STEP = 1e-6


def half(t, panel):
    return np.full(panel.n, 0.5)


def mean_equation(panel, beta, weights, spec):
    block = terminal_block(panel, weights, spec)
    residual = block.outcome - block.basis @ beta
    return (block.index * (residual * block.inverse_weight)[:, None]).mean(axis=0)


def analytic_cross_jacobian(result):
    block = result.blocks[0]
    n = block.index.shape[0]
    residual = block.outcome - block.basis @ result.beta
    weighted = block.index * (residual * block.inverse_weight)[:, None]
    return -weighted.T @ block.log_gradient / n


def numeric_cross_jacobian(panel, result, build, spec):
    theta = result.nuisance.theta
    columns = []
    for j in range(len(theta)):
        shift = np.zeros_like(theta)
        shift[j] = STEP
        upper = mean_equation(panel, result.beta, build(replace(result.nuisance, theta=theta + shift)), spec)
        lower = mean_equation(panel, result.beta, build(replace(result.nuisance, theta=theta - shift)), spec)
        columns.append((upper - lower) / (2 * STEP))
    return np.column_stack(columns)


@pytest.fixture(scope="module")
def linear():
    dgp = LinearDgp(LinearDgpParams())
    return dgp, dgp.simulate(2000, seed=51).panel.drop_latent()


@pytest.fixture(scope="module")
def markov():
    dgp = MarkovDgp(MarkovDgpParams())
    return dgp, dgp.simulate(2000, seed=52).panel.drop_latent()


class TestSandwich:
    def test_known_nuisances_reduce_to_weighted_least_squares(self, linear):
        dgp, panel = linear
        result = estimate(panel, EstimatorConfig(kind=EstimatorKind.IV, treatment_model="known", dgp=dgp))
        assert result.nuisance.dim == 0

        block = result.blocks[0]
        scaled = block.index * block.inverse_weight[:, None]
        bread = scaled.T @ block.basis / panel.n
        residual = block.outcome - block.basis @ result.beta
        expected = np.linalg.solve(bread, (scaled * residual[:, None]).T).T
        np.testing.assert_allclose(influence_function(result), expected, rtol=1e-8, atol=1e-10)

    def test_positive_semidefinite(self, linear):
        _, panel = linear
        cov = sandwich_variance(estimate(panel, EstimatorConfig(kind=EstimatorKind.IV)))
        np.testing.assert_array_equal(cov, cov.T)
        assert np.all(np.linalg.eigvalsh(cov) >= -1e-12)

    def test_influence_is_centered(self, linear):
        _, panel = linear
        influence = influence_function(estimate(panel, EstimatorConfig(kind=EstimatorKind.IV)))
        np.testing.assert_allclose(influence.mean(axis=0), 0.0, atol=1e-6)

    def test_ols_sandwich_matches_model_based(self):
        rng = np.random.default_rng(53)
        n = 10_000
        a = rng.integers(0, 2, (n, 2)).astype(float)
        y = 1.0 + 2.0 * a.sum(axis=1) + rng.standard_normal(n)
        panel = LongitudinalPanel(a=a, z=a.copy(), l=np.zeros((n, 2)), y=y)
        result = estimate(panel, EstimatorConfig(kind=EstimatorKind.ASSOCIATIONAL))

        design = np.column_stack([np.ones(n), a.sum(axis=1)])
        residual = y - design @ result.beta
        model_based = residual.var() * np.linalg.inv(design.T @ design)
        np.testing.assert_allclose(np.diag(sandwich_variance(result)), np.diag(model_based), rtol=0.1)

    def test_cross_jacobian_probit(self, linear):
        _, panel = linear
        result = estimate(panel, EstimatorConfig(kind=EstimatorKind.IV))
        model = ProbitTreatmentModel()

        def build(fit):
            return iv_weights(panel, half, lambda t, p: model.delta(fit, p, t))

        np.testing.assert_allclose(
            analytic_cross_jacobian(result), numeric_cross_jacobian(panel, result, build, MsmmSpec()),
            rtol=1e-4, atol=1e-6,
        )

    def test_cross_jacobian_stabilized_markov(self, markov):
        dgp, panel = markov
        config = EstimatorConfig(kind=EstimatorKind.IV_STABILIZED, treatment_model="markov", dgp=dgp)
        result = estimate(panel, config)
        model = MarkovTreatmentModel(0.5)

        def build(fit):
            delta0, delta1, p_l = fit.theta
            gamma0, gamma1 = default_gamma(p_l, delta0, delta1)
            return iv_stabilized_weights(
                panel, lambda t, a: np.where(a == 1.0, gamma1, gamma0),
                half, lambda t, p: model.delta(fit, p, t),
            )

        np.testing.assert_allclose(
            analytic_cross_jacobian(result), numeric_cross_jacobian(panel, result, build, config.resolved_spec()),
            rtol=1e-4, atol=1e-6,
        )

    def test_normal_intervals(self):
        intervals = normal_intervals(np.array([1.0]), np.array([[4.0]]), 0.95)
        np.testing.assert_allclose(intervals, [[1.0 - 1.959963984540054 * 2, 1.0 + 1.959963984540054 * 2]])


class TestBootstrap:
    def test_identical_subjects_have_zero_variance(self):
        n = 20
        panel = LongitudinalPanel(a=np.ones((n, 2)), z=np.ones((n, 2)), l=np.zeros((n, 2)), y=np.full(n, 3.0))
        config = EstimatorConfig(kind=EstimatorKind.ASSOCIATIONAL, spec=MsmmSpec(intercept=False))
        result = bootstrap(panel, config, B=10, seed=1)

        np.testing.assert_array_equal(result.cov, 0.0)
        np.testing.assert_allclose(result.intervals, [[1.5, 1.5]])
        assert result.failures == 0

    def test_reproducible(self, linear):
        _, panel = linear
        config = EstimatorConfig(kind=EstimatorKind.ASSOCIATIONAL)
        first = bootstrap(panel, config, B=20, seed=7)
        second = bootstrap(panel, config, B=20, seed=7)
        parallel = bootstrap(panel, config, B=20, seed=7, jobs=2)
        other = bootstrap(panel, config, B=20, seed=8)

        np.testing.assert_array_equal(first.estimates, second.estimates)
        np.testing.assert_array_equal(first.estimates, parallel.estimates)
        assert not np.array_equal(first.estimates, other.estimates)

    def test_few_replicates_warn(self, linear, package_log):
        _, panel = linear
        bootstrap(panel, EstimatorConfig(kind=EstimatorKind.ASSOCIATIONAL), B=5, seed=1)
        assert "Only 5 bootstrap replicates" in package_log.text

    @pytest.mark.parametrize("B, level", [(1, 0.95), (0, 0.95), (10, 1.0)])
    def test_invalid_arguments(self, linear, B, level):
        _, panel = linear
        with pytest.raises(InvalidArgument):
            bootstrap(panel, EstimatorConfig(kind=EstimatorKind.ASSOCIATIONAL), B=B, seed=1, level=level)

    def test_too_many_failures(self, linear):
        dgp, panel = linear
        with pytest.raises(TooManyFailures, match="10 of 10"):
            bootstrap(panel, EstimatorConfig(kind=EstimatorKind.ORACLE, dgp=dgp), B=10, seed=1)


class TestAnalyze:
    def test_without_bootstrap(self, linear):
        _, panel = linear
        report = analyze(panel, EstimatorConfig(kind=EstimatorKind.IV))

        assert report.kind == "iv"
        assert report.bootstrap_cov is None
        assert np.all(np.isnan(report.se_bootstrap))
        assert np.all(report.se_sandwich > 0.0)
        assert report.ci_sandwich.shape == (2, 2)
        assert report.nuisance.startswith("probit(")
        assert report.diagnostics["nuisance_converged"]

        row = report.to_row()
        assert row["n"] == panel.n and row["T"] == panel.T
        assert "se_sw_beta1" in row and "weight_second_moment" in row

    def test_with_bootstrap(self, linear, tmp_path):
        _, panel = linear
        report = analyze(panel, EstimatorConfig(kind=EstimatorKind.ASSOCIATIONAL), B=50, seed=3)
        assert report.B == 50
        assert report.ci_bootstrap.shape == (2, 2)
        assert report.se_bootstrap == pytest.approx(report.se_sandwich, rel=0.5)

        path = tmp_path / "report.csv"
        report.write_csv(str(path))
        assert path.read_text().startswith("kind,beta0,beta1,se_sw_beta0,se_bs_beta0")

    def test_known_nuisances(self, linear):
        dgp, panel = linear
        report = analyze(panel, EstimatorConfig(kind=EstimatorKind.IV, treatment_model="known", dgp=dgp))
        assert report.nuisance == "known"
