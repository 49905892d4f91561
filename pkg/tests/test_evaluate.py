"""Metric oracles: RMSE, mass inconsistency, reports, time-series export."""

import csv

import numpy as np
import pytest

from conftest import make_series
from lakedo.errors import DomainError
from lakedo.evaluate import (
    TIMESERIES_COLUMNS,
    EvalReport,
    build_report,
    compare_models,
    export_timeseries,
    mass_inconsistency,
    reference_rollout,
    regime_masked_predictions,
    rmse,
    task_rmse,
)
from lakedo.physics import simulate_targets


class TestRmse:
    def test_two_day_oracle(self):
        value = rmse([8.0, 6.0], [7.0, 8.0], [True, True])
        assert value == pytest.approx(np.sqrt(2.5), rel=1e-15)

    def test_perfect_predictions(self):
        assert rmse([3.0, 4.0], [3.0, 4.0], [True, True]) == 0.0

    def test_single_day_mask_is_absolute_residual(self):
        assert rmse([8.0, 6.0], [7.0, 8.0], [False, True]) == 2.0

    def test_empty_mask_rejected(self):
        with pytest.raises(DomainError, match="empty mask"):
            rmse([1.0], [2.0], [False])

    def test_shape_mismatch_rejected(self):
        with pytest.raises(DomainError, match="share a shape"):
            rmse([1.0, 2.0], [2.0], [True])

    def test_permutation_invariant(self):
        rng = np.random.default_rng(5)
        p = rng.normal(size=40)
        o = rng.normal(size=40)
        m = rng.random(40) < 0.5
        perm = rng.permutation(40)
        assert rmse(p, o, m) == pytest.approx(rmse(p[perm], o[perm], m[perm]),
                                              rel=1e-12)

    def test_task_rmse_handles_unobserved_tasks(self):
        series = make_series("MSSM", obs={0: (None, None, 4.0),
                                          2: (5.0, None, None)})
        preds = np.full((4, 3), 6.0)
        out = task_rmse(preds, series)
        assert out[0] == 1.0
        assert np.isnan(out[1])
        assert out[2] == 2.0


class TestMassInconsistency:
    def test_reference_rollout_scores_zero(self):
        series = make_series("MSSSSM")
        rolled = reference_rollout(series, (np.nan, np.nan, 8.0), k_reference=12)
        metric = mass_inconsistency(rolled, series, k_reference=12)
        assert np.nanmax(metric) <= 1e-9

    def test_constant_predictions_on_mixed_series(self):
        # Targets are prev + flux, so the gap each day is exactly |flux|.
        series = make_series("MMM")
        preds = np.full((3, 3), 5.0)
        metric = mass_inconsistency(preds, series)
        assert np.isnan(metric[0]) and np.isnan(metric[1])
        assert metric[2] == pytest.approx(abs(series.f_exo_total[0]), rel=1e-12)

    def test_moving_toward_rollout_shrinks_metric_linearly(self):
        series = make_series("MSSSSM")
        rolled = reference_rollout(series, (np.nan, np.nan, 8.0), k_reference=12)
        rng = np.random.default_rng(11)
        preds = np.where(np.isfinite(rolled), rolled + rng.normal(size=(6, 3)), 0.0)
        values = []
        for alpha in (0.0, 0.5, 1.0):
            mixed = np.where(np.isfinite(rolled),
                             (1 - alpha) * preds + alpha * rolled, preds)
            m = mass_inconsistency(mixed, series, k_reference=12)
            values.append(np.nansum(m))
        assert values[0] > values[1] > values[2]
        assert values[1] == pytest.approx(0.5 * values[0], rel=1e-9)
        assert values[2] <= 1e-9

    def test_day_subset_restricts_the_mean(self):
        series = make_series("MSSSSM")
        rng = np.random.default_rng(3)
        preds = rng.normal(8.0, 1.0, (6, 3))
        k = np.full(6, 192, dtype=np.int64)
        targets = simulate_targets(series, preds, k_per_day=k)
        days = np.zeros(6, dtype=bool)
        days[2] = True
        metric = mass_inconsistency(preds, series, days=days)
        assert metric[0] == pytest.approx(abs(preds[2, 0] - targets[2, 0]), rel=1e-12)
        assert np.isnan(metric[2])

    def test_daily_reference_variant(self):
        series = make_series("MSSM")
        rng = np.random.default_rng(4)
        preds = rng.normal(8.0, 1.0, (4, 3))
        k1 = np.ones(4, dtype=np.int64)
        targets = simulate_targets(series, preds, k_per_day=k1)
        metric = mass_inconsistency(preds, series, k_reference=1)
        expected = np.nanmean(np.abs(preds[:, 0] - targets[:, 0]))
        assert metric[0] == pytest.approx(expected, rel=1e-12)

    def test_needs_two_days(self):
        series = make_series("M")
        with pytest.raises(DomainError, match="two days"):
            mass_inconsistency(np.zeros((1, 3)), series)

    def test_regime_masking_helper(self):
        series = make_series("MSSM")
        preds = np.ones((4, 3))
        masked = regime_masked_predictions(preds, series)
        assert np.isnan(masked[0, 0]) and masked[0, 2] == 1.0
        assert masked[1, 0] == 1.0 and np.isnan(masked[1, 2])


class TestReports:
    def test_build_report_aggregates_seeds(self):
        r = np.array([[1.0, 2.0, 3.0], [3.0, 2.0, 1.0]])
        c = np.array([[0.1, 0.2, 0.3], [0.3, 0.2, 0.1]])
        rep = build_report("pril", r, c)
        assert rep.n_seeds == 2
        np.testing.assert_allclose(rep.rmse_mean, [2.0, 2.0, 2.0])
        np.testing.assert_allclose(rep.rmse_std, [1.0, 0.0, 1.0])
        np.testing.assert_allclose(rep.inconsistency, [0.2, 0.2, 0.2])

    def test_report_validation(self):
        with pytest.raises(DomainError, match="non-negative"):
            EvalReport(model="x", n_seeds=1, rmse_mean=np.array([-1.0, 0, 0]),
                       rmse_std=np.zeros(3), inconsistency=np.zeros(3))
        with pytest.raises(DomainError, match="at least one seed"):
            EvalReport(model="x", n_seeds=0, rmse_mean=np.zeros(3),
                       rmse_std=np.zeros(3), inconsistency=np.zeros(3))

    def test_compare_models_table_shape(self, tmp_path):
        rep = build_report("base", np.ones((1, 3)), np.ones((1, 3)))
        rows = compare_models([rep, rep], path=tmp_path / "cmp.csv")
        assert len(rows) == 3
        assert len(rows[0]) == 10
        assert rows[1] == rows[2]
        with open(tmp_path / "cmp.csv", newline="") as fh:
            parsed = list(csv.reader(fh))
        assert parsed == rows

    def test_compare_models_needs_reports(self):
        with pytest.raises(DomainError, match="at least one"):
            compare_models([])


class TestExport:
    def test_shape_and_roundtrip(self, tmp_path):
        series = make_series("MSSSM", obs={0: (None, None, 4.0),
                                           2: (5.0, 6.0, None)})
        rng = np.random.default_rng(9)
        preds = rng.normal(8.0, 1.0, (5, 3))
        path = tmp_path / "ts.csv"
        export_timeseries(path, series, regime_masked_predictions(preds, series),
                          k_reference=2)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 6
        assert tuple(rows[0]) == TIMESERIES_COLUMNS
        # Mixed day 1: layer prediction cells are empty, not zero.
        assert rows[1][1] == "" and rows[1][2] == ""
        assert float(rows[1][3]) == preds[0, 2]
        # Observations and absent truth render empty where undefined.
        assert float(rows[1][9]) == 4.0
        assert rows[2][9] == "" and rows[1][10] == ""
        # Simulation column matches the reference targets bit for bit.
        k = np.full(5, 2, dtype=np.int64)
        targets = simulate_targets(series, regime_masked_predictions(preds, series),
                                   k_per_day=k)
        assert float(rows[2][4]) == targets[1, 0]

    def test_truth_column_written(self, tmp_path):
        series = make_series("MM")
        preds = np.zeros((2, 3))
        truth = np.array([[np.nan, np.nan, 7.0], [np.nan, np.nan, 7.5]])
        path = tmp_path / "ts.csv"
        export_timeseries(path, series, preds, truth=truth)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert float(rows[1][12]) == 7.0
        assert rows[1][10] == ""

    def test_length_mismatch_rejected(self, tmp_path):
        series = make_series("MM")
        with pytest.raises(DomainError, match="shape"):
            export_timeseries(tmp_path / "x.csv", series, np.zeros((3, 3)))
