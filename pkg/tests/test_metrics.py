import json

import numpy as np
import pytest
from scipy.optimize import linprog

from dynerr.core import NormStats, TrajectoryDataset
from dynerr.indices import DynamicalIndices
from dynerr.metrics import (
    BinnedErrorCurve,
    DidSamples,
    EvaluationReport,
    ForecastPair,
    build_report,
    combined_wd,
    di_error,
    did,
    lat_weighted_rmse,
    per_state_squared_error,
    quantile_bin_errors,
    state_error,
    wasserstein_1d,
    write_curve_csv,
)


def pair_from(pred, truth, dt=0.1, lead=1):
    return ForecastPair(
        pred=TrajectoryDataset("p", dt, np.asarray(pred, dtype=np.float64)),
        truth=TrajectoryDataset("t", dt, np.asarray(truth, dtype=np.float64)),
        lead_steps=lead,
    )


def indices_from(d, theta, valid=None):
    d = np.asarray(d, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    if valid is None:
        valid = np.isfinite(d) & np.isfinite(theta)
    return DynamicalIndices(
        d=d,
        theta=theta,
        valid=np.asarray(valid, dtype=bool),
        q=0.98,
        n_exceedances=np.full(d.size, 100, dtype=np.int64),
        gof_p=np.full(d.size, 0.5),
    )


class TestStateError:
    def test_identity_forecast_zero(self, rng):
        x = rng.standard_normal((6, 4))
        pair = pair_from(x, x)
        for kind in ("mse", "nmse", "mae", "nmae"):
            if kind == "nmae" and abs(x.mean()) < 1e-12:
                continue
            assert state_error(pair, kind) == 0.0

    def test_constant_offset(self, rng):
        x = rng.standard_normal((5, 3)) + 5.0
        pair = pair_from(x + 1.0, x)
        assert state_error(pair, "mse") == pytest.approx(1.0)
        assert state_error(pair, "mae") == pytest.approx(1.0)

    def test_matches_double_loop_oracle(self, rng):
        pred = rng.standard_normal((5, 4))
        truth = rng.standard_normal((5, 4)) + 2.0
        pair = pair_from(pred, truth)
        acc_sq = 0.0
        acc_abs = 0.0
        for i in range(5):
            for j in range(4):
                diff = pred[i, j] - truth[i, j]
                acc_sq += diff * diff
                acc_abs += abs(diff)
        assert state_error(pair, "mse") == pytest.approx(acc_sq / 20, abs=1e-12)
        assert state_error(pair, "mae") == pytest.approx(acc_abs / 20, abs=1e-12)
        sigma = truth.std()
        mu = truth.mean()
        assert state_error(pair, "nmse") == pytest.approx(acc_sq / 20 / sigma**2, abs=1e-12)
        assert state_error(pair, "nmae") == pytest.approx(acc_abs / 20 / mu, abs=1e-12)

    def test_norm_stats_override(self, rng):
        pred = rng.standard_normal((4, 2))
        truth = rng.standard_normal((4, 2))
        pair = pair_from(pred, truth)
        norm = NormStats(mean=2.0, std=4.0)
        assert state_error(pair, "nmse", norm) == pytest.approx(state_error(pair, "mse") / 16)
        assert state_error(pair, "nmae", norm) == pytest.approx(state_error(pair, "mae") / 2)

    def test_degenerate_normalizers_rejected(self):
        pair = pair_from([[1.0, 2.0]], [[3.0, 3.0]])
        with pytest.raises(ValueError, match="NMSE"):
            state_error(pair, "nmse")
        pair2 = pair_from([[1.0, 2.0]], [[-1.0, 1.0]])
        with pytest.raises(ValueError, match="NMAE"):
            state_error(pair2, "nmae")

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="mismatch"):
            pair_from(np.ones((3, 2)), np.ones((2, 2)))


class TestPerStateSquaredError:
    def test_identical_rows_zero(self, rng):
        x = rng.standard_normal((4, 3))
        assert np.array_equal(per_state_squared_error(pair_from(x, x)), np.zeros(4))

    def test_single_entry_arithmetic(self):
        truth = np.zeros((5, 4))
        pred = np.zeros((5, 4))
        pred[3, 1] = 2.0
        errs = per_state_squared_error(pair_from(pred, truth))
        assert errs[3] == pytest.approx(1.0)
        assert errs[0] == 0.0

    def test_mean_equals_full_mse(self, rng):
        pred = rng.standard_normal((30, 6))
        truth = rng.standard_normal((30, 6))
        pair = pair_from(pred, truth)
        assert per_state_squared_error(pair).mean() == pytest.approx(state_error(pair, "mse"), abs=1e-12)


class TestDiError:
    def test_identity_zero(self, rng):
        idx = indices_from(rng.uniform(1, 3, 20), rng.uniform(0.1, 1, 20))
        for kind in ("mse", "nmse", "mae", "nmae"):
            assert di_error(idx, idx, kind, "d") == 0.0
            assert di_error(idx, idx, kind, "theta") == 0.0

    def test_constant_bias(self, rng):
        d = rng.uniform(1, 3, 10)
        theta = rng.uniform(0.2, 0.9, 10)
        pred = indices_from(d + 0.1, theta)
        true = indices_from(d, theta)
        assert di_error(pred, true, "mse", "d") == pytest.approx(0.01, rel=1e-12)
        assert di_error(pred, true, "mae", "d") == pytest.approx(0.1, rel=1e-12)

    def test_against_loop_oracle(self, rng):
        n = 40
        d_true = rng.uniform(1, 3, n)
        d_pred = d_true + rng.normal(0, 0.2, n)
        th_true = rng.uniform(0.1, 1.0, n)
        th_pred = np.clip(th_true + rng.normal(0, 0.05, n), 0.01, 1.0)
        valid_p = rng.random(n) > 0.2
        valid_t = rng.random(n) > 0.2
        pred = indices_from(d_pred, th_pred, valid_p)
        true = indices_from(d_true, th_true, valid_t)
        mask = valid_p & valid_t
        diff = d_pred[mask] - d_true[mask]
        assert di_error(pred, true, "mse", "d") == pytest.approx(np.mean(diff**2), abs=1e-12)
        assert di_error(pred, true, "nmse", "d") == pytest.approx(
            np.mean(diff**2) / d_true[mask].var(), abs=1e-12
        )
        tdiff = th_pred[mask] - th_true[mask]
        assert di_error(pred, true, "nmae", "theta") == pytest.approx(
            np.mean(np.abs(tdiff)) / th_true[mask].mean(), abs=1e-12
        )

    def test_no_overlap_rejected(self):
        a = indices_from([1.0, np.nan], [0.5, np.nan])
        b = indices_from([np.nan, 2.0], [np.nan, 0.5])
        with pytest.raises(ValueError, match="jointly-valid"):
            di_error(a, b, "mse", "d")


class TestDid:
    def test_identical_indices_zero_samples(self, rng):
        idx = indices_from(rng.uniform(1, 3, 8), rng.uniform(0.1, 1, 8))
        samples = did(idx, idx, np.zeros(8))
        assert len(samples) == 8
        assert np.all(samples.did_d == 0) and np.all(samples.did_theta == 0)
        assert samples.quadrant_percentages()[0] == 100.0

    def test_constructed_quadrant(self, rng):
        d = rng.uniform(1, 3, 10)
        theta = rng.uniform(0.3, 0.9, 10)
        pred = indices_from(d + 1.0, theta - 0.1)
        true = indices_from(d, theta)
        samples = did(pred, true, rng.random(10))
        assert samples.quadrant_percentages() == (0.0, 100.0, 0.0, 0.0)

    def test_percentages_sum_to_hundred(self, rng):
        pred = indices_from(rng.uniform(1, 3, 200), rng.uniform(0.1, 1, 200))
        true = indices_from(rng.uniform(1, 3, 200), rng.uniform(0.1, 1, 200))
        pct = did(pred, true, rng.random(200)).quadrant_percentages()
        assert sum(pct) == pytest.approx(100.0, abs=1e-9)

    def test_pairs_errors_with_states(self, rng):
        d = rng.uniform(1, 3, 6)
        theta = rng.uniform(0.1, 1, 6)
        valid = np.array([True, False, True, True, False, True])
        pred = indices_from(d + 0.5, theta, valid)
        true = indices_from(d, theta)
        errs = rng.random(6)
        samples = did(pred, true, errs)
        assert len(samples) == 4
        assert np.array_equal(samples.mse_state, errs[valid])


def transport_lp(a, b):
    na, nb = len(a), len(b)
    cost = np.abs(a[:, None] - b[None, :]).ravel()
    a_eq = []
    b_eq = []
    for i in range(na):
        row = np.zeros((na, nb))
        row[i, :] = 1
        a_eq.append(row.ravel())
        b_eq.append(1.0 / na)
    for j in range(nb):
        row = np.zeros((na, nb))
        row[:, j] = 1
        a_eq.append(row.ravel())
        b_eq.append(1.0 / nb)
    res = linprog(cost, A_eq=np.array(a_eq), b_eq=np.array(b_eq), bounds=(0, None), method="highs")
    assert res.success
    return res.fun


class TestWasserstein:
    def test_identical_multisets_zero(self, rng):
        a = rng.standard_normal(20)
        assert wasserstein_1d(a, a.copy()) == 0.0
        assert wasserstein_1d(a, rng.permutation(a)) == pytest.approx(0.0, abs=1e-15)

    def test_point_masses(self):
        assert wasserstein_1d([0.0], [1.0]) == pytest.approx(1.0)

    def test_equal_length_sorted_formula(self, rng):
        a = rng.standard_normal(50)
        b = rng.standard_normal(50)
        expected = np.abs(np.sort(a) - np.sort(b)).mean()
        assert wasserstein_1d(a, b) == pytest.approx(expected, abs=1e-12)

    def test_matches_transport_lp_oracle(self, rng):
        for _ in range(50):
            a = rng.normal(0, 2, rng.integers(1, 9))
            b = rng.normal(1, 3, rng.integers(1, 9))
            assert wasserstein_1d(a, b) == pytest.approx(transport_lp(a, b), abs=1e-9)

    def test_metric_axioms(self, rng):
        for _ in range(200):
            a = rng.standard_normal(rng.integers(2, 12))
            b = rng.standard_normal(rng.integers(2, 12))
            c = rng.standard_normal(rng.integers(2, 12))
            ab = wasserstein_1d(a, b)
            assert ab == pytest.approx(wasserstein_1d(b, a), abs=1e-12)
            assert ab >= 0
            assert ab <= wasserstein_1d(a, c) + wasserstein_1d(c, b) + 1e-9

    def test_translation_invariance(self, rng):
        a = rng.standard_normal(30)
        b = rng.standard_normal(40)
        assert wasserstein_1d(a + 5.0, b + 5.0) == pytest.approx(wasserstein_1d(a, b), abs=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            wasserstein_1d([], [1.0])


class TestCombinedWd:
    def test_identical_sets_zero(self, rng):
        idx = indices_from(rng.uniform(1, 3, 30), rng.uniform(0.1, 1, 30))
        assert combined_wd(idx, idx) == (0.0, 0.0, 0.0)

    def test_translated_marginal(self, rng):
        d = rng.uniform(1, 3, 25)
        theta = rng.uniform(0.1, 1, 25)
        pred = indices_from(d + 0.5, theta)
        true = indices_from(d, theta)
        wd, wd_d, wd_theta = combined_wd(pred, true)
        assert wd_d == pytest.approx(0.5, abs=1e-12)
        assert wd_theta == 0.0
        assert wd == pytest.approx(0.5, abs=1e-12)

    def test_symmetry(self, rng):
        pred = indices_from(rng.uniform(1, 3, 20), rng.uniform(0.1, 1, 20))
        true = indices_from(rng.uniform(1, 3, 35), rng.uniform(0.1, 1, 35))
        assert combined_wd(pred, true) == pytest.approx(combined_wd(true, pred), abs=1e-12)


class TestLatWeightedRmse:
    def test_identity_zero(self, rng):
        x = rng.standard_normal((4, 3, 5))
        assert lat_weighted_rmse(x, x, np.array([-30.0, 0.0, 30.0])) == 0.0

    def test_uniform_latitude_degeneracy(self, rng):
        x = rng.standard_normal((3, 2, 4))
        y = rng.standard_normal((3, 2, 4))
        value = lat_weighted_rmse(x, y, np.array([10.0, 10.0]))
        expected = np.sqrt(((x - y) ** 2).sum(axis=(1, 2))).mean()
        assert value == pytest.approx(expected, rel=1e-12)

    def test_two_latitude_hand_computation(self):
        # unit error everywhere, latitudes 0 and 60 degrees, single longitude
        pred = np.ones((2, 2, 1))
        truth = np.zeros((2, 2, 1))
        lats = np.array([0.0, 60.0])
        w = np.array([1.0, 0.5]) / 0.75
        expected = np.sqrt(w.sum())
        assert lat_weighted_rmse(pred, truth, lats) == pytest.approx(expected, rel=1e-12)

    def test_poles_only_rejected(self):
        x = np.ones((1, 2, 1))
        with pytest.raises(ValueError, match="zero"):
            lat_weighted_rmse(x, x, np.array([90.0, -90.0]))

    def test_latitude_range_validated(self):
        x = np.ones((1, 1, 1))
        with pytest.raises(ValueError, match="degrees"):
            lat_weighted_rmse(x, x, np.array([100.0]))


class TestQuantileBinErrors:
    def test_one_sample_per_bin(self, rng):
        vals = rng.standard_normal(10)
        errs = rng.random(10)
        curve = quantile_bin_errors(vals, errs, 10)
        assert np.array_equal(curve.mean_error, errs[np.argsort(vals, kind="stable")])
        assert np.array_equal(curve.count, np.ones(10, dtype=np.int64))

    def test_constant_errors_flat(self, rng):
        curve = quantile_bin_errors(rng.standard_normal(100), np.full(100, 2.5), 10)
        assert np.allclose(curve.mean_error, 2.5)

    def test_count_weighted_means_conserve_global_mean(self, rng):
        vals = rng.standard_normal(103)
        errs = rng.random(103)
        curve = quantile_bin_errors(vals, errs, 10)
        weighted = (curve.mean_error * curve.count).sum() / curve.count.sum()
        assert weighted == pytest.approx(errs.mean(), abs=1e-12)

    def test_remainder_spread_from_top(self, rng):
        curve = quantile_bin_errors(rng.standard_normal(25), rng.random(25), 10)
        assert np.array_equal(curve.count, [2, 2, 2, 2, 2, 3, 3, 3, 3, 3])

    def test_non_finite_samples_dropped(self, rng):
        vals = rng.standard_normal(30)
        errs = rng.random(30)
        vals[3] = np.nan
        curve = quantile_bin_errors(vals, errs, 5)
        assert curve.count.sum() == 29

    def test_too_few_samples(self, rng):
        with pytest.raises(ValueError, match="at least"):
            quantile_bin_errors(rng.standard_normal(5), rng.random(5), 10)

    def test_curve_csv(self, rng, tmp_path):
        curve = quantile_bin_errors(rng.standard_normal(40), rng.random(40), 4)
        path = tmp_path / "curve.csv"
        write_curve_csv(curve, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "bin,quantile_lo,quantile_hi,mean_error,count"
        assert len(lines) == 5
        last = lines[-1].split(",")
        assert float(last[2]) == pytest.approx(1.0)


class TestBuildReport:
    def make_env(self, rng, n=60):
        truth_states = rng.standard_normal((n, 3))
        pred_states = truth_states + rng.normal(0, 0.1, (n, 3))
        pair = pair_from(pred_states, truth_states)
        d = rng.uniform(1.5, 2.5, n)
        theta = rng.uniform(0.1, 0.9, n)
        pred_idx = indices_from(d + rng.normal(0, 0.1, n), np.clip(theta + rng.normal(0, 0.02, n), 0.01, 1))
        true_idx = indices_from(d, theta)
        return pair, pred_idx, true_idx

    def test_identity_report_all_zero(self, rng):
        x = rng.standard_normal((40, 3)) + 4.0
        pair = pair_from(x, x)
        idx = indices_from(rng.uniform(1, 3, 40), rng.uniform(0.1, 1, 40))
        report = build_report(pair, idx, idx)
        for name in ("mse", "nmse", "mae", "nmae", "mse_d", "mse_theta", "nmse_d",
                     "nmse_theta", "mae_d", "mae_theta", "nmae_d", "nmae_theta",
                     "wd", "wd_d", "wd_theta"):
            assert getattr(report, name) == 0.0, name
        assert np.all(report.did.did_d == 0)

    def test_means_over_valid_states(self, rng):
        pair, pred_idx, true_idx = self.make_env(rng)
        report = build_report(pair, pred_idx, true_idx)
        assert report.mean_d_true == pytest.approx(true_idx.d[true_idx.valid].mean())
        assert report.mean_theta_pred == pytest.approx(pred_idx.theta[pred_idx.valid].mean())
        assert report.n_valid + report.n_skipped == pair.n_times

    def test_json_round_trip_lossless(self, rng, tmp_path):
        pair, pred_idx, true_idx = self.make_env(rng)
        report = build_report(pair, pred_idx, true_idx)
        path = tmp_path / "report.json"
        report.to_json(path)
        loaded = EvaluationReport.from_json(path)
        assert loaded.mse == report.mse
        assert loaded.wd == report.wd
        assert np.array_equal(loaded.did.did_d, report.did.did_d)
        assert np.array_equal(loaded.curves["d"].mean_error, report.curves["d"].mean_error)
        assert loaded.n_valid == report.n_valid

    def test_curves_condition_on_true_indices(self, rng):
        pair, pred_idx, true_idx = self.make_env(rng, n=80)
        report = build_report(pair, pred_idx, true_idx, n_bins=8)
        errs = per_state_squared_error(pair)
        expected = quantile_bin_errors(true_idx.d, errs, 8)
        assert np.array_equal(report.curves["d"].mean_error, expected.mean_error)

    def test_json_schema_field_names(self, rng):
        pair, pred_idx, true_idx = self.make_env(rng)
        payload = json.loads(build_report(pair, pred_idx, true_idx).to_json())
        expected_keys = {
            "mse", "nmse", "mae", "nmae", "mse_d", "mse_theta", "nmse_d", "nmse_theta",
            "mae_d", "mae_theta", "nmae_d", "nmae_theta", "wd", "wd_d", "wd_theta",
            "mean_d_pred", "mean_theta_pred", "mean_d_true", "mean_theta_true",
            "did", "curves", "n_valid", "n_skipped",
        }
        assert set(payload.keys()) == expected_keys
        assert set(payload["did"][0].keys()) == {"did_d", "did_theta", "mse_state"}
