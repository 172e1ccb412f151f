import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from ivmsmm.backend.analysis.diagnostics import (
    MalformedTable,
    UnnormalizedTable,
    check_ict,
    check_point_exposure_converse,
    linear_ict_table,
    load_model_file,
    markov_ict_table,
    markov_point_exposure_tables,
    run_model,
    run_identity_battery,
    identity_battery,
    verify_theorem1_mc,
)
from ivmsmm.backend.estimation.weights import iv_weights
from ivmsmm.backend.simulation.common import InvalidParams
from ivmsmm.backend.simulation.continuous import ContinuousDgp, ContinuousDgpParams
from ivmsmm.backend.simulation.linear import LinearDgp, LinearDgpParams
from ivmsmm.backend.simulation.markov import MarkovDgp, MarkovDgpParams

MODELS = Path(__file__).resolve().parents[1] / "data" / "models"


@pytest.fixture
def markov():
    return MarkovDgp(MarkovDgpParams())


class TestIct:
    def test_markov_passes(self, markov):
        report = check_ict(markov_ict_table(markov))
        assert report.passed
        assert not report.iv_irrelevant
        assert report.max_deviation <= 1e-12

    def test_linear_passes(self):
        assert check_ict(linear_ict_table(LinearDgp(LinearDgpParams()))).passed

    def test_violation(self, markov):
        table = markov_ict_table(markov)
        cell = (table["t"] == 0) & (table["l"] == 0) & (table["u"] == 1) & (table["z"] == 1)
        table.loc[cell & (table["a"] == 1), "prob"] += 0.05
        table.loc[cell & (table["a"] == 0), "prob"] -= 0.05

        report = check_ict(table)
        assert not report.passed
        assert report.max_deviation == pytest.approx(0.05)
        assert report.worst_cell["l"] == 0 and report.worst_cell["t"] == 0

    def test_irrelevant_instrument(self):
        rows = [
            {"t": 0, "history": "", "l": l, "u": u, "z": z, "a": a, "prob": 0.3 if a == 1 else 0.7}
            for l in (0, 1) for u in (0, 1) for z in (0, 1) for a in (0, 1)
        ]
        report = check_ict(pd.DataFrame(rows))
        assert report.passed and report.iv_irrelevant

    def test_unnormalized(self, markov):
        table = markov_ict_table(markov)
        table.loc[0, "prob"] *= 0.9
        with pytest.raises(UnnormalizedTable, match="sum to"):
            check_ict(table)

    def test_missing_column(self, markov):
        with pytest.raises(MalformedTable, match="prob"):
            check_ict(markov_ict_table(markov).drop(columns="prob"))


class TestPointExposure:
    def test_iv_weights_pass(self, markov):
        report = check_point_exposure_converse(*markov_point_exposure_tables(markov))
        assert report.passed
        assert report.u_varying and report.proportional
        assert report.constants[0.0] == pytest.approx((2.0, 2.0))

    def test_unit_weights_fail(self, markov):
        omega, p_a = markov_point_exposure_tables(markov)
        report = check_point_exposure_converse(omega.assign(omega=1.0), p_a)
        assert not report.passed
        assert not report.constant_in_u
        assert "vary with u" in report.failures[0]

    def test_treatment_constant_in_u(self):
        omega = pd.DataFrame([{"a": a, "z": z, "l": 0.0, "omega": 1.0 + a + 2 * z}
                              for a in (0, 1) for z in (0, 1)])
        p_a = pd.DataFrame([{"l": 0.0, "u": u, "z": z, "p_a1": 0.4 + 0.2 * z} for u in (0, 1) for z in (0, 1)])
        report = check_point_exposure_converse(omega, p_a)
        assert report.passed
        assert not report.u_varying
        assert report.proportional is None

    def test_missing_cells(self, markov):
        omega, p_a = markov_point_exposure_tables(markov)
        with pytest.raises(MalformedTable):
            check_point_exposure_converse(omega[omega["l"] == 0.0], p_a)


class TestWeightingIdentity:
    @pytest.mark.parametrize("dgp", [
        MarkovDgp(MarkovDgpParams()),
        LinearDgp(LinearDgpParams()),
    ], ids=lambda dgp: dgp.name)
    def test_battery_agrees(self, dgp):
        checks = run_identity_battery(dgp, 20_000, seed=61)
        assert [check.function for check in checks] == list(identity_battery(dgp))
        for check in checks:
            assert abs(check.z) < 4.0, check

    def test_wrong_weights_are_detected(self, markov):
        def doubled(panel):
            return iv_weights(panel, lambda t, p: np.full(p.n, 0.5),
                              lambda t, p: 2.0 * markov.compliance_delta(t, p))

        check = verify_theorem1_mc(markov, lambda y, a: np.ones(len(y)), 50_000, seed=62,
                                   weights=doubled, name="constant")
        assert not check.passed

    def test_constant_function(self, markov):
        check = verify_theorem1_mc(markov, lambda y, a: np.ones(len(y)), 5000, seed=63)
        assert check.rhs == 8.0 and check.rhs_se == 0.0
        assert check.to_row()["check"] == "weighting-identity"

    def test_sample_size(self, markov):
        with pytest.raises(InvalidParams):
            verify_theorem1_mc(markov, lambda y, a: y, 1, seed=1)

    @pytest.mark.slow
    def test_battery_at_large_n(self, markov):
        assert all(check.passed for check in run_identity_battery(markov, 500_000, seed=64))


class TestModelFiles:
    @pytest.mark.parametrize("name, passed", [
        ("markov-ict.json", True),
        ("ict-violation.json", False),
        ("point-exposure-iv.json", True),
    ])
    def test_shipped_models(self, name, passed):
        (report,) = run_model(load_model_file(str(MODELS / name)))
        assert report.passed is passed

    def test_unknown_check(self):
        with pytest.raises(MalformedTable, match="unknown check"):
            run_model({"check": "frontdoor"})

    def test_missing_entry(self):
        with pytest.raises(MalformedTable, match="omega"):
            run_model({"check": "point-exposure", "p_a": []})

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(MalformedTable):
            load_model_file(str(path))

    def test_missing_check_key(self, tmp_path):
        path = tmp_path / "model.json"
        path.write_text(json.dumps({"table": []}))
        with pytest.raises(MalformedTable, match="check"):
            load_model_file(str(path))


def test_continuous_battery_uses_density_weighted_functions():
    battery = identity_battery(ContinuousDgp(ContinuousDgpParams()))
    assert list(battery) == ["residual_density", "density", "dose_density", "outcome_density",
                             "squared_dose_density"]
    a = np.zeros((1, 1))
    assert battery["density"](np.zeros(1), a)[0] == pytest.approx(1.0 / np.sqrt(2.0 * np.pi))
