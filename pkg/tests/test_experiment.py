import numpy as np
import pytest

from ivmsmm.backend.estimation import experiment
from ivmsmm.backend.estimation.estimators import EstimatorKind, estimate
from ivmsmm.backend.estimation.experiment import COVERAGE_COLUMNS, coverage_experiment, default_config
from ivmsmm.backend.estimation.inference import InvalidArgument, TooManyFailures
from ivmsmm.backend.simulation.common import InvalidParams
from ivmsmm.backend.simulation.registry import make_dgp


class TestDefaultConfig:
    @pytest.mark.parametrize("dgp, model", [("linear", "probit"), ("markov", "markov"), ("continuous", "known")])
    def test_nuisance_models(self, dgp, model):
        config = default_config(EstimatorKind.IV, make_dgp(dgp))
        assert config.treatment_model == model
        assert config.dgp.name == dgp

    def test_overrides(self):
        config = default_config(EstimatorKind.SRA, make_dgp("linear"), treatment_model="known")
        assert config.treatment_model == "known"
        assert config.kind is EstimatorKind.SRA


class TestCoverageExperiment:
    def test_shape(self):
        frame = coverage_experiment("linear", ["associational", "iv"], [300], [2], R=3, seed=5)

        assert list(frame.columns) == COVERAGE_COLUMNS
        assert list(frame["kind"]) == ["associational", "iv"]
        assert (frame["R"] == 3).all() and (frame["seed"] == 5).all()
        assert frame["bs_sd"].isna().all()
        assert frame["sw_cover"].between(0.0, 1.0).all()

    def test_reproducible(self):
        first = coverage_experiment("markov", ["sra", "iv"], [300], [2], R=2, seed=6)
        second = coverage_experiment("markov", ["sra", "iv"], [300], [2], R=2, seed=6)
        assert first.equals(second)

    def test_with_bootstrap(self):
        frame = coverage_experiment("linear", ["associational"], [200], [1], R=2, seed=7, B=10)
        assert np.isfinite(frame.loc[0, "bs_sd"])

    def test_bootstrap_failure_keeps_sandwich(self, monkeypatch, package_log):
        def failing_bootstrap(*args, **kwargs):
            raise TooManyFailures("every resample failed")

        monkeypatch.setattr(experiment, "bootstrap", failing_bootstrap)
        frame = coverage_experiment("linear", ["associational"], [200], [1], R=2, seed=7, B=10)

        assert np.isfinite(frame.loc[0, "bias"])
        assert np.isfinite(frame.loc[0, "sw_sd"]) and np.isfinite(frame.loc[0, "sw_cover"])
        assert np.isnan(frame.loc[0, "bs_sd"]) and np.isnan(frame.loc[0, "bs_cover"])
        assert "bootstrap failed in 2 of 2" in package_log.text
        assert "replications failed" not in package_log.text

    def test_few_replications_warn(self, package_log):
        coverage_experiment("linear", ["associational"], [100], [1], R=2, seed=8)
        assert "Only 2 replications" in package_log.text

    def test_zero_replications(self):
        with pytest.raises(InvalidArgument):
            coverage_experiment("linear", ["associational"], [100], [1], R=0)

    def test_continuous_is_single_period(self):
        with pytest.raises(InvalidParams):
            coverage_experiment("continuous", ["iv"], [100], [2], R=1)

    @pytest.mark.slow
    def test_iv_bias_vanishes_and_competitors_stay_biased(self):
        frame = coverage_experiment("linear", ["associational", "sra", "iv"], [2000, 8000, 32000], [2],
                                    R=200, seed=9, jobs=-1)
        bias = frame.set_index(["kind", "n"])["bias"].abs()

        assert bias["iv", 32000] < 0.05
        assert bias["iv", 32000] < bias["iv", 2000]
        assert bias["associational", 32000] > 2 * bias["iv", 32000]
        assert bias["sra", 32000] > 2 * bias["iv", 32000]

    @pytest.mark.slow
    def test_iv_intervals_cover(self):
        frame = coverage_experiment("linear", ["iv"], [32000], [2], R=500, seed=11, B=300, jobs=-1)
        row = frame.iloc[0]

        assert 0.92 <= row["sw_cover"] <= 0.97
        assert 0.92 <= row["bs_cover"] <= 0.97
        assert abs(row["sw_sd"] / row["mc_sd"] - 1.0) < 0.15

    @pytest.mark.slow
    def test_continuous_iv_error_distribution(self):
        dgp = make_dgp("continuous")
        config = default_config(EstimatorKind.IV, dgp)
        estimates = np.array([
            estimate(dgp.simulate(1000, seed=12, replication=r).panel.drop_latent(), config).beta[-1]
            for r in range(1000)
        ])
        errors = estimates - dgp.beta[-1]

        assert errors.mean() == pytest.approx(-0.195, abs=0.10)
        assert errors.std(ddof=1) == pytest.approx(0.64, abs=0.20)
        assert np.median(np.abs(errors)) == pytest.approx(0.249, abs=0.10)

    @pytest.mark.slow
    def test_markov_sra_is_biased(self):
        frame = coverage_experiment("markov", ["sra", "iv"], [5000], [3], R=100, seed=10)
        rows = frame.set_index("kind")
        assert abs(rows.loc["sra", "bias"]) > abs(rows.loc["iv", "bias"])
