import numpy as np
import pandas as pd
import pytest

from ivmsmm.backend.models.panel import (
    CovariateSpec,
    LongitudinalPanel,
    MeanModel,
    MsmmSpec,
    PanelError,
    design_row,
    panel_from_frame,
    read_panel_csv,
    validate,
    write_panel_csv,
)


@pytest.fixture
def panel():
    a = np.array([[1, 0], [1, 1], [0, 0]])
    z = np.array([[1, 0], [1, 1], [0, 1]])
    l = np.array([[0.5, -1.0], [0.25, 2.0], [1.5, 0.0]])
    u = np.array([[0.1, 0.2], [0.3, 0.4], [0.5, 0.6]])
    return LongitudinalPanel(a=a, z=z, l=l, y=np.array([1.0, 2.5, -0.75]), u=u)


class TestMsmmSpec:
    def test_cumulative_basis(self):
        spec = MsmmSpec()
        np.testing.assert_array_equal(design_row(spec, [1, 0, 1]), [1.0, 2.0])
        np.testing.assert_array_equal(MsmmSpec(intercept=False).basis_rows([[1, 1, 0]]), [[2.0]])
        assert spec.coefficient_names() == ("beta0", "beta1")

    def test_mean(self):
        paths = np.array([[0, 0], [1, 1]])
        np.testing.assert_allclose(MsmmSpec().mean([0.5, 2.0], paths), [0.5, 4.5])

    def test_general_basis_needs_function(self):
        with pytest.raises(ValueError):
            MsmmSpec(mean_model=MeanModel.LINEAR_GENERAL)

    def test_custom_index(self):
        spec = MsmmSpec(intercept=False).with_index(lambda p: 2.0 * p.sum(axis=1))
        np.testing.assert_array_equal(spec.index_rows([[1, 1]]), [[4.0]])
        np.testing.assert_array_equal(spec.basis_rows([[1, 1]]), [[2.0]])


class TestLongitudinalPanel:
    def test_shapes(self, panel):
        assert (panel.n, panel.T, panel.k) == (3, 2, 1)
        assert panel.l.shape == (3, 2, 1)
        assert panel.has_latent
        assert not panel.repeated_measures
        np.testing.assert_array_equal(panel.subjects, [1, 2, 3])

    def test_lagged_treatment_starts_at_zero(self, panel):
        np.testing.assert_array_equal(panel.lagged_treatment(), [[0, 1], [0, 1], [0, 0]])
        np.testing.assert_array_equal(panel.cumulative_treatment(), [1, 2, 0])

    def test_take_repeats_subjects(self, panel):
        taken = panel.take([2, 2, 0])
        np.testing.assert_array_equal(taken.a, [[0, 0], [0, 0], [1, 0]])
        np.testing.assert_array_equal(taken.y, [-0.75, -0.75, 1.0])
        np.testing.assert_array_equal(taken.subjects, [1, 2, 3])

    def test_needs_outcome(self):
        with pytest.raises(PanelError):
            LongitudinalPanel(a=np.zeros((2, 1)), z=np.zeros((2, 1)), l=np.zeros((2, 1)))

    def test_covariate_shape(self):
        with pytest.raises(PanelError):
            LongitudinalPanel(a=np.zeros((2, 2)), z=np.zeros((2, 2)), l=np.zeros((2, 3)), y=np.zeros(2))

    def test_repeated_measures_outcome(self):
        panel = LongitudinalPanel(a=np.zeros((2, 2)), z=np.zeros((2, 2)), l=np.zeros((2, 2)),
                                  y_t=np.array([[1.0, 2.0], [3.0, 4.0]]))
        assert panel.repeated_measures
        np.testing.assert_array_equal(panel.outcome, [2.0, 4.0])

    def test_validate(self, panel):
        assert validate(panel) == []
        broken = LongitudinalPanel(a=panel.a + 1, z=panel.z * 2, l=panel.l, y=panel.y)
        assert validate(broken) == ["instrument not binary", "treatment not binary"]


class TestCovariateSpec:
    def test_rows(self, panel):
        rows = CovariateSpec(lagged_treatment=True).rows(panel, 1)
        np.testing.assert_array_equal(rows, [[1, -1.0, 1], [1, 2.0, 1], [1, 0.0, 0]])
        assert CovariateSpec(lagged_treatment=True).names(panel) == ["intercept", "l1", "a_lag"]

    def test_empty_selection(self, panel):
        with pytest.raises(PanelError):
            CovariateSpec(intercept=False, columns=()).rows(panel, 0)


class TestCsv:
    def test_write_then_read(self, panel, tmp_path):
        path = tmp_path / "panel.csv"
        write_panel_csv(panel, str(path))
        frame = pd.read_csv(path)
        assert list(frame.columns) == ["subject", "t", "a", "z", "l1", "u1", "y"]
        assert len(frame) == 6

        loaded = read_panel_csv(str(path))
        np.testing.assert_array_equal(loaded.a, panel.a)
        np.testing.assert_array_equal(loaded.l, panel.l)
        np.testing.assert_array_equal(loaded.u, panel.u)
        np.testing.assert_array_equal(loaded.y, panel.y)
        assert loaded.binary_treatment

    def test_unsorted_rows(self):
        frame = pd.DataFrame({
            "subject": [2, 1, 2, 1], "t": [2, 2, 1, 1], "a": [1, 0, 0, 1], "z": [1, 1, 0, 0],
            "l1": [0.4, 0.2, 0.3, 0.1], "y": [5.0, 3.0, 5.0, 3.0],
        })
        panel = panel_from_frame(frame)
        np.testing.assert_array_equal(panel.a, [[1, 0], [0, 1]])
        np.testing.assert_array_equal(panel.l[:, :, 0], [[0.1, 0.2], [0.3, 0.4]])
        np.testing.assert_array_equal(panel.y, [3.0, 5.0])

    @pytest.mark.parametrize("change, message", [
        (lambda f: f.drop(columns="z"), "missing column z"),
        (lambda f: f.assign(z=[0, 2, 0, 1]), "instrument not binary"),
        (lambda f: f.iloc[:3], "ragged subject"),
        (lambda f: f.assign(l1=[0.1, np.nan, 0.3, 0.4]), "missing values"),
    ])
    def test_invalid_frames(self, change, message):
        frame = pd.DataFrame({
            "subject": [1, 1, 2, 2], "t": [1, 2, 1, 2], "a": [1, 0, 0, 1], "z": [1, 1, 0, 0],
            "l1": [0.1, 0.2, 0.3, 0.4], "y": [3.0, 3.0, 5.0, 5.0],
        })
        with pytest.raises(PanelError) as error:
            panel_from_frame(change(frame))
        assert message in error.value.errors
