import numpy as np
import pytest

from ivmsmm.backend.analysis.markov_analysis import (
    GrowthModel,
    default_gamma,
    enumerate_iv_moment,
    enumerate_sra_moment,
    estimate_back_transition,
    growth_sweep,
    iv_exact_second_moment,
    iv_stab_exact_second_moment,
    iv_stab_growth,
    iv_stab_moment_mc,
    iv_unstab_growth,
    iv_weight_moment_mc,
    omega_kappa,
    sra_stab_growth_factor,
    sra_moment_mc,
    sra_stab_second_moment,
    sra_unstab_second_moment,
    sra_variance_approx,
    sra_variance_mc,
)
from ivmsmm.backend.simulation.common import InvalidParams
from ivmsmm.backend.simulation.markov import MarkovDgpParams


class TestSraMoments:
    @pytest.mark.parametrize("p_LA, p_AL, T", [(0.7, 0.6, 1), (0.7, 0.6, 4), (0.55, 0.9, 3), (0.3, 0.2, 5)])
    def test_closed_forms_match_enumeration(self, p_LA, p_AL, T):
        assert sra_unstab_second_moment(p_LA, T) == pytest.approx(enumerate_sra_moment(p_LA, p_AL, T), rel=1e-10)
        assert sra_stab_second_moment(p_LA, p_AL, T) == pytest.approx(
            enumerate_sra_moment(p_LA, p_AL, T, stabilized=True), rel=1e-10
        )

    def test_stabilized_growth_factor(self):
        assert sra_stab_growth_factor(0.7, 0.6) == pytest.approx(1.182857, abs=1e-6)
        assert sra_stab_growth_factor(0.5, 0.8) == 1.0

    def test_unstabilized_at_one_half(self):
        assert sra_unstab_second_moment(0.5, 3) == pytest.approx(64.0)

    def test_probability_range(self):
        with pytest.raises(InvalidParams, match="p_LA"):
            sra_unstab_second_moment(1.0, 2)

    @pytest.mark.slow
    @pytest.mark.parametrize("p", [0.3, 0.5, 0.7])
    @pytest.mark.parametrize("T", range(1, 7))
    def test_unstabilized_against_monte_carlo(self, p, T):
        mean, se = sra_moment_mc(p, 0.6, T, 100_000, seed=40 + T)
        assert abs(mean - (p * (1 - p)) ** (-T)) < 3 * se

    def test_variance_approximation_single_period(self):
        # constant weights at p_LA = 1/2
        assert sra_variance_approx(0.5, 1, 1.0, 1.0) == pytest.approx(2.5)
        assert sra_variance_mc(0.5, 1, 1.0, 1.0, n=2000, replications=400, seed=31) == pytest.approx(2.5, rel=0.25)

    def test_variance_mc_reproducible(self):
        first = sra_variance_mc(0.7, 3, 0.5, 1.0, n=500, replications=20, seed=32)
        assert first == sra_variance_mc(0.7, 3, 0.5, 1.0, n=500, replications=20, seed=32)
        assert first > 0.0


class TestIvMoments:
    @pytest.mark.parametrize("p, delta0, delta1, T", [(0.7, 0.2, 0.3, 1), (0.7, 0.2, 0.3, 6), (0.3, 0.5, -0.4, 4)])
    def test_recurrence_matches_enumeration(self, p, delta0, delta1, T):
        assert iv_exact_second_moment(p, delta0, delta1, T) == pytest.approx(
            enumerate_iv_moment(p, delta0, delta1, T), rel=1e-10
        )

    def test_monte_carlo(self):
        mean, se = iv_weight_moment_mc(0.7, 0.4, 0.5, 3, 200_000, seed=11)
        assert abs(mean - iv_exact_second_moment(0.7, 0.4, 0.5, 3)) < 4 * se

    def test_growth(self):
        report = iv_unstab_growth(0.7, 0.2, 0.3)
        eigenvalues = np.sort(np.linalg.eigvals(report.recurrence_matrix).real)
        assert report.lambda1 == pytest.approx(eigenvalues[1], rel=1e-10)
        assert report.lambda2 == pytest.approx(eigenvalues[0], rel=1e-10)
        assert report.bound_holds

        omega, kappa = omega_kappa(0.2, 0.3)
        assert report.omega == pytest.approx(omega)
        assert omega == pytest.approx(1 / 0.06)
        assert kappa == pytest.approx(25.0 - 1 / 0.09)

    def test_moment_grows_like_lambda1(self):
        report = iv_unstab_growth(0.7, 0.2, 0.3)
        ratio = iv_exact_second_moment(0.7, 0.2, 0.3, 30) / iv_exact_second_moment(0.7, 0.2, 0.3, 29)
        assert ratio == pytest.approx(report.lambda1, rel=1e-6)

    def test_zero_delta(self):
        with pytest.raises(InvalidParams):
            omega_kappa(0.0, 0.3)


class TestStabilizedIv:
    def test_default_gamma(self):
        gamma0, gamma1 = default_gamma(0.7, 0.2, 0.3, normalize=False)
        assert (gamma0, gamma1) == pytest.approx((0.23, 0.27))
        assert sum(default_gamma(0.7, 0.2, 0.3)) == pytest.approx(1.0)

    def test_lambda1_decomposition(self):
        gamma0, gamma1 = default_gamma(0.7, 0.2, 0.3, normalize=False)
        report = iv_stab_growth(0.7, 0.6, 0.2, 0.3, gamma0, gamma1)
        assert report.extras["lambda1_rewritten"] == pytest.approx(report.lambda1, rel=1e-10)
        assert report.extras["omega_term"] + report.extras["kappa_term"] == pytest.approx(
            report.extras["trace"] / 2.0, rel=1e-10
        )
        assert report.extras["gamma"] == pytest.approx((0.23 / 0.5, 0.27 / 0.5))

    def test_exact_moment_against_monte_carlo(self):
        gamma0, gamma1 = default_gamma(0.7, 0.4, 0.6)
        exact = iv_stab_exact_second_moment(0.7, 0.6, 0.4, 0.6, gamma0, gamma1, 3)
        mean, se = iv_stab_moment_mc(0.7, 0.6, 0.4, 0.6, gamma0, gamma1, 3, 200_000, seed=12)
        assert abs(mean - exact) < 4 * se

    def test_kappa_term_vanishes_with_equal_stabilizers(self):
        spreads = [0.3, 0.2, 0.1, 0.05, 0.0]
        reports = [iv_stab_growth(0.7, 0.6, 0.2, 0.3, 0.5 - s, 0.5 + s) for s in spreads]
        kappa_terms = [abs(r.extras["kappa_term"]) for r in reports]
        omega_terms = [r.extras["omega_term"] for r in reports]

        assert all(later < earlier for earlier, later in zip(kappa_terms, kappa_terms[1:]))
        assert kappa_terms[-1] == pytest.approx(0.0, abs=1e-15)
        assert min(omega_terms) > 0.1
        assert reports[-1].lambda1 >= omega_terms[-1]

    def test_zero_stabilizers(self):
        with pytest.raises(InvalidParams):
            iv_stab_growth(0.7, 0.6, 0.2, 0.3, 0.0, 0.0)


class TestSweep:
    def test_shape_and_reproducibility(self):
        grid = {"p_LA": [0.6, 0.7], "p_AL": [0.6]}
        frame = growth_sweep(GrowthModel.SRA_STAB, grid, [1, 2], mc_n=1000, seed=3)

        assert list(frame.columns) == ["model", "p_LA", "p_AL", "T", "second_moment", "lambda1",
                                       "mc_second_moment", "mc_se", "seed"]
        assert len(frame) == 4
        assert frame.loc[1, "second_moment"] == pytest.approx(sra_stab_second_moment(0.6, 0.6, 2))
        assert frame.equals(growth_sweep(GrowthModel.SRA_STAB, grid, [1, 2], mc_n=1000, seed=3))

    def test_analytic_only(self):
        frame = growth_sweep(GrowthModel.IV_UNSTAB, {"p": [0.7], "delta0": [0.2], "delta1": [0.3]}, [5])
        assert "mc_second_moment" not in frame.columns
        assert frame.loc[0, "second_moment"] == pytest.approx(iv_exact_second_moment(0.7, 0.2, 0.3, 5))

    def test_missing_parameter(self):
        with pytest.raises(InvalidParams, match="gamma0, gamma1"):
            growth_sweep(GrowthModel.IV_STAB, {"p_LA": [0.7], "p_AL": [0.6], "delta0": [0.2], "delta1": [0.3]}, [2])


def test_back_transition():
    assert 0.0 < estimate_back_transition(MarkovDgpParams(), 5000, seed=13) < 1.0
    with pytest.raises(InvalidParams):
        estimate_back_transition(MarkovDgpParams(T=1), 100, seed=13)
