from pathlib import Path

import pandas as pd
import pytest

from ivmsmm.frontend.cli.cli import build_parser, main

MODELS = Path(__file__).resolve().parents[1] / "data" / "models"


def simulate(tmp_path, name="panel.csv", *extra):
    out = tmp_path / name
    assert main(["simulate", "--dgp", "linear", "--n", "300", "--t", "2", "--seed", "4",
                 "--out", str(out), *extra]) == 0
    return out


class TestSimulate:
    def test_reproducible_files(self, tmp_path):
        first = simulate(tmp_path, "first.csv")
        second = simulate(tmp_path, "second.csv")
        assert first.read_bytes() == second.read_bytes()
        assert (tmp_path / "first.truth").read_bytes() == (tmp_path / "second.truth").read_bytes()

    def test_hide_latent(self, tmp_path):
        frame = pd.read_csv(simulate(tmp_path, "panel.csv", "--hide-latent"))
        assert not any(column.startswith("u") for column in frame.columns)
        assert len(frame) == 600

    def test_invalid_parameters(self, tmp_path, package_log):
        code = main(["simulate", "--dgp", "markov", "--n", "10", "--delta0", "0",
                     "--out", str(tmp_path / "markov.csv")])
        assert code == 1
        assert "nonzero" in package_log.text

    def test_unknown_dgp(self, tmp_path, package_log):
        assert main(["simulate", "--dgp", "probit", "--n", "10", "--out", str(tmp_path / "x.csv")]) == 1
        assert "expected one of: linear, markov, continuous" in package_log.text

    def test_config_file(self, tmp_path):
        config = tmp_path / "run.conf"
        config.write_text("dgp = markov\nn = 50\nT = 2\nseed = 3\n")
        out = tmp_path / "from-config.csv"
        assert main(["simulate", "--config", str(config), "--n", "20", "--out", str(out)]) == 0
        frame = pd.read_csv(out)
        assert len(frame) == 40

    def test_missing_config(self, tmp_path, package_log):
        assert main(["simulate", "--config", str(tmp_path / "absent.conf"), "--n", "5"]) == 1
        assert "does not exist" in package_log.text


class TestEstimate:
    def test_report_and_bootstrap(self, tmp_path, capsys):
        panel = simulate(tmp_path)
        out = tmp_path / "report.csv"
        weights = tmp_path / "weights.csv"
        code = main(["estimate", str(panel), "--kind", "associational", "--bootstrap", "20",
                     "--out", str(out), "--weights-out", str(weights)])
        assert code == 0

        printed = capsys.readouterr().out
        assert printed.startswith("associational estimate (300 subjects, 2 periods)")
        assert "bootstrap: 20 replicates" in printed

        report = pd.read_csv(out)
        assert {"beta1", "se_sw_beta1", "se_bs_beta1"} <= set(report.columns)
        assert report.loc[0, "B"] == 20
        assert list(pd.read_csv(weights).columns) == ["subject", "t", "w", "wbar"]

    def test_iv_with_truth(self, tmp_path, capsys):
        panel = simulate(tmp_path, "panel.csv", "--hide-latent")
        assert main(["estimate", str(panel), "--kind", "iv", "--treatment-model", "known"]) == 0
        assert "nuisance: known" in capsys.readouterr().out

    def test_oracle_needs_latent_columns(self, tmp_path, package_log):
        panel = simulate(tmp_path, "panel.csv", "--hide-latent")
        assert main(["estimate", str(panel), "--kind", "oracle"]) == 1
        assert "latent columns required" in package_log.text

    def test_wald_needs_one_period(self, tmp_path, package_log):
        panel = simulate(tmp_path)
        assert main(["estimate", str(panel), "--kind", "wald"]) == 1
        assert "wald requires T=1" in package_log.text

    def test_unknown_kind(self, tmp_path, package_log):
        panel = simulate(tmp_path)
        assert main(["estimate", str(panel), "--kind", "naive"]) == 1
        assert "expected one of: associational" in package_log.text

    def test_missing_truth(self, tmp_path, package_log):
        panel = simulate(tmp_path)
        assert main(["estimate", str(panel), "--truth", str(tmp_path / "none.truth")]) == 1
        assert "does not exist" in package_log.text

    def test_bare_bootstrap_flag(self):
        args = build_parser().parse_args(["estimate", "panel.csv", "--bootstrap"])
        assert args.bootstrap == "500"


class TestExperiment:
    def test_small_run(self, tmp_path, capsys):
        out = tmp_path / "coverage.csv"
        code = main(["experiment", "--dgp", "markov", "--kinds", "sra,iv", "--n", "200",
                     "--t", "2", "--replications", "2", "--seed", "1", "--out", str(out)])
        assert code == 0

        frame = pd.read_csv(out)
        assert list(frame.columns) == ["dgp", "kind", "n", "T", "R", "bias", "mc_sd", "sw_sd", "bs_sd",
                                       "sw_cover", "bs_cover", "seed"]
        assert list(frame["kind"]) == ["sra", "iv"]
        assert "sw_cover" in capsys.readouterr().out

    def test_zero_replications(self, tmp_path, package_log):
        code = main(["experiment", "--n", "100", "--replications", "0", "--out", str(tmp_path / "c.csv")])
        assert code == 1
        assert "replications must be at least 1" in package_log.text


class TestAnalyzeWeights:
    def test_sweep(self, tmp_path):
        out = tmp_path / "growth.csv"
        code = main(["analyze-weights", "--model", "sra-stab", "--grid", "p_LA=0.6,0.7",
                     "--grid", "p_AL=0.6", "--t", "1,2", "--out", str(out)])
        assert code == 0
        frame = pd.read_csv(out)
        assert len(frame) == 4
        assert frame.loc[0, "second_moment"] == pytest.approx(1.0 + 4 * 0.01)

    def test_unknown_model(self, tmp_path, package_log):
        assert main(["analyze-weights", "--model", "iv", "--out", str(tmp_path / "g.csv")]) == 1
        assert "expected one of: sra-unstab, sra-stab, iv-unstab, iv-stab" in package_log.text

    def test_malformed_grid(self, tmp_path, package_log):
        assert main(["analyze-weights", "--model", "sra-unstab", "--grid", "0.7"]) == 1
        assert "NAME=V1" in package_log.text


class TestDiagnose:
    @pytest.mark.parametrize("name, code", [
        ("markov-ict.json", 0),
        ("ict-violation.json", 1),
        ("point-exposure-iv.json", 0),
    ])
    def test_model_files(self, name, code, capsys):
        assert main(["diagnose", str(MODELS / name)]) == code
        printed = capsys.readouterr().out
        assert ("[PASS]" if code == 0 else "[FAIL]") in printed

    def test_builtin(self, tmp_path, capsys):
        out = tmp_path / "checks.csv"
        assert main(["diagnose", "--builtin", "markov", "--out", str(out)]) == 0
        assert "2 of 2 checks passed" in capsys.readouterr().out
        assert list(pd.read_csv(out)["check"]) == ["ict", "point-exposure"]

    def test_malformed_file(self, tmp_path, package_log):
        path = tmp_path / "model.json"
        path.write_text('{"check": "ict", "table": [{"t": 0}]}')
        assert main(["diagnose", str(path)]) == 1
        assert "misses columns" in package_log.text

    def test_needs_input(self, package_log):
        assert main(["diagnose"]) == 1
        assert "model file or --builtin" in package_log.text


def test_invalid_jobs():
    with pytest.raises(SystemExit) as error:
        main(["--jobs", "0", "diagnose"])
    assert error.value.code == 2
