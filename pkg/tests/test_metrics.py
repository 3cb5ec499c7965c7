import numpy as np
import pytest

from shredkit.metrics import avg_relative_error, field_report, update_report


class TestAvgRelativeError:
    def test_zero_for_perfect_estimate(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((10, 6))
        err = avg_relative_error(x, x)
        assert err.value == 0.0
        np.testing.assert_array_equal(err.series, np.zeros(6))

    def test_hand_arithmetic_single_column(self):
        truth = np.array([[1.0], [0.0]])
        estimate = np.array([[0.0], [1.0]])
        err = avg_relative_error(truth, estimate)
        assert err.value == pytest.approx(np.sqrt(2.0))

    def test_matches_naive_loop(self):
        rng = np.random.default_rng(1)
        truth = rng.standard_normal((20, 15))
        estimate = truth + 0.1 * rng.standard_normal((20, 15))
        cols = np.array([2, 5, 7, 11])
        err = avg_relative_error(truth, estimate, cols)
        expected = []
        for j in cols:
            expected.append(
                np.linalg.norm(truth[:, j] - estimate[:, j]) / np.linalg.norm(truth[:, j])
            )
        assert err.value == pytest.approx(np.mean(expected), rel=1e-12)
        np.testing.assert_allclose(err.series, expected, rtol=1e-12)

    def test_zero_norm_columns_skipped_and_reported(self):
        truth = np.zeros((4, 3))
        truth[:, 1] = [1.0, 0.0, 0.0, 0.0]
        truth[:, 2] = [0.0, 2.0, 0.0, 0.0]
        estimate = np.ones((4, 3))
        err = avg_relative_error(truth, estimate)
        assert err.skipped == (0,)
        assert err.columns.tolist() == [1, 2]

    def test_average_equals_series_mean(self):
        rng = np.random.default_rng(2)
        truth = rng.standard_normal((8, 30)) + 5.0
        estimate = truth + rng.standard_normal((8, 30))
        err = avg_relative_error(truth, estimate)
        assert err.value == pytest.approx(err.series.mean(), abs=1e-12)

    def test_scaled_vs_physical_differ(self):
        # the metric is not invariant under affine scaling with nonzero offset,
        # which is why reports are computed on physical-unit fields
        rng = np.random.default_rng(3)
        physical = 290.0 + 10.0 * rng.random((12, 9))
        estimate = physical + 0.5 * rng.standard_normal((12, 9))
        lo, hi = physical.min(), physical.max()
        scaled_err = avg_relative_error((physical - lo) / (hi - lo),
                                        (estimate - lo) / (hi - lo))
        physical_err = avg_relative_error(physical, estimate)
        assert abs(scaled_err.value - physical_err.value) > 1e-6

    def test_all_zero_truth_rejected(self):
        with pytest.raises(ValueError):
            avg_relative_error(np.zeros((3, 2)), np.ones((3, 2)))


class TestFieldReport:
    def test_perfect_oracle_gives_zeros(self):
        rng = np.random.default_rng(4)
        fields = {"T": rng.random((6, 8)) + 1.0, "p": rng.random((6, 8)) + 1.0}
        rows = field_report(fields, fields, np.arange(8), channel="ext")
        assert all(r.error.value == 0.0 for r in rows)
        assert {r.field for r in rows} == {"T", "p"}


class TestUpdateReport:
    def test_identical_systems_give_no_strict_wins(self):
        rng = np.random.default_rng(5)
        a = rng.standard_normal((4, 20))
        report = update_report(a, a, a, locations=range(4))
        assert report.fraction_closer == 0.0
        for v in report.verdicts:
            assert v.dist_estimate == v.dist_baseline == 0.0

    def test_estimate_tracking_truth_wins(self):
        rng = np.random.default_rng(6)
        baseline = rng.standard_normal((5, 30))
        truth = baseline + 1.0
        estimate = truth + 0.01 * rng.standard_normal((5, 30))
        report = update_report(baseline, truth, estimate, locations=range(5))
        assert report.fraction_closer == 1.0
        for v in report.verdicts:
            assert v.dist_estimate < v.dist_baseline

    def test_empty_location_list(self):
        report = update_report(np.zeros((0, 5)), np.zeros((0, 5)), np.zeros((0, 5)), [])
        assert report.verdicts == ()
        assert report.fraction_closer == 0.0
