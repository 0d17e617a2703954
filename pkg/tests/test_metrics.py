import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from movingbase.estimators import Innovation
from movingbase.metrics import (
    AlignmentError,
    anees_coverage,
    chi2_bounds,
    compute_metrics,
    coverage,
    nees_series,
    rmse,
)


def series(n=1000, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(n) * 0.01
    truth = rng.normal(0, 1, (n, 9))
    return t, truth


@pytest.mark.parametrize(
    "dof, runs, expected",
    [
        # printed chi-square table values
        (9, 1, (2.700, 19.023)),
        (3, 1, (0.216, 9.348)),
        (6, 1, (1.237, 14.449)),
    ],
)
def test_chi2_bounds_table(dof, runs, expected):
    lo, hi = chi2_bounds(dof, 0.95, runs)
    assert lo == pytest.approx(expected[0], abs=1e-3)
    assert hi == pytest.approx(expected[1], abs=1e-3)


def test_chi2_bounds_average_of_runs():
    lo, hi = chi2_bounds(9, 0.95, 50)
    assert (lo, hi) == pytest.approx((7.8624, 10.2134), abs=1e-4)


def test_zero_error():
    t, truth = series()
    cov = np.broadcast_to(np.eye(9), (t.size, 9, 9))
    m = compute_metrics(t, truth, truth.copy(), cov)
    assert not m.pos_rmse.any() and not m.vel_rmse.any() and not m.d_rmse.any()
    assert not m.nees.any()


def test_constant_offset():
    t, truth = series()
    est = truth - 0.1
    m = compute_metrics(t, truth, est)
    np.testing.assert_allclose(m.pos_rmse, 0.1, rtol=1e-12)
    np.testing.assert_allclose(m.vel_rmse, 0.1, rtol=1e-12)
    np.testing.assert_allclose(m.d_rmse, 0.1, rtol=1e-12)
    assert m.vel_rmse_xy == pytest.approx(0.1 * np.sqrt(2))


def test_white_noise_rmse():
    t, truth = series(200_000)
    est = truth + np.random.default_rng(1).normal(0, 0.02, truth.shape)
    m = compute_metrics(t, truth, est)
    np.testing.assert_allclose(m.pos_rmse, 0.02, rtol=0.01)


def test_six_state_estimate_and_window():
    t, truth = series()
    est = truth[:, :6].copy()
    est[t < 2.0] += 5.0
    m = compute_metrics(t, truth, est, window=(2.0, 8.0))
    assert not m.pos_rmse.any()
    assert not m.d_rmse.any()


def test_nees_against_direct_formula():
    rng = np.random.default_rng(2)
    n = 50
    A = rng.normal(size=(n, 4, 4))
    P = A @ np.transpose(A, (0, 2, 1)) + 4 * np.eye(4)
    e = rng.normal(size=(n, 4))
    expected = [ei @ np.linalg.inv(Pi) @ ei for ei, Pi in zip(e, P)]
    np.testing.assert_allclose(nees_series(e, np.zeros_like(e), P), expected, rtol=1e-10)


def test_gaussian_nees_coverage_near_nominal():
    rng = np.random.default_rng(3)
    n = 20_000
    e = rng.normal(size=(n, 9))
    nees = nees_series(e, np.zeros_like(e), np.broadcast_to(np.eye(9), (n, 9, 9)))
    assert coverage(nees, chi2_bounds(9)) == pytest.approx(0.95, abs=0.01)
    cov, avg = anees_coverage(nees.reshape(50, -1), 9)
    assert avg.shape == (n // 50,)
    assert cov == pytest.approx(0.95, abs=0.03)


def test_nis_from_innovations():
    t, truth = series(10)
    recs = [Innovation(float(ti), np.array([0.1, 0.0, 0.0]), 0.01 * np.eye(3)) for ti in t]
    m = compute_metrics(t, truth, truth, innovations=recs)
    np.testing.assert_allclose(m.nis, 1.0)
    assert m.nis_coverage == 1.0


def test_tracking_rmse():
    t, truth = series(100)
    sp = truth[:, 0:6:2] - np.array([0.03, 0.04, 0.0])
    m = compute_metrics(t, truth, truth, setpoints=sp)
    assert m.tracking_rmse == pytest.approx(0.05)


def test_total_variation():
    t = np.arange(5) * 0.1
    truth = np.zeros((5, 9))
    est = np.zeros((5, 9))
    est[:, 1] = [0.0, 1.0, 0.0, 1.0, 0.0]
    m = compute_metrics(t, truth, est)
    assert m.vel_total_variation[0] == 4.0


def test_empty_series():
    m = compute_metrics(np.zeros(0), np.zeros((0, 9)), np.zeros((0, 9)))
    assert not m.pos_rmse.any() and m.nees.size == 0 and m.nees_coverage == 0.0
    assert rmse(np.zeros((0, 3))).shape == (3,)


@pytest.mark.parametrize("which", ["truth", "estimate", "cov", "setpoints"])
def test_misaligned_series(which):
    t, truth = series(10)
    args = dict(times=t, truth=truth, estimate=truth, covariances=np.zeros((10, 9, 9)), setpoints=np.zeros((10, 3)))
    key = {"truth": "truth", "estimate": "estimate", "cov": "covariances", "setpoints": "setpoints"}[which]
    args[key] = args[key][:-1]
    with pytest.raises(AlignmentError):
        compute_metrics(**args)


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=50))
def test_rmse_bounds(values):
    v = np.array(values)
    r = float(rmse(v))
    assert r <= np.abs(v).max() + 1e-9
    assert r >= np.abs(v).mean() - 1e-9


def test_nees_frozen_states_use_pseudo_inverse():
    P = np.broadcast_to(np.diag([4.0, 1.0, 0.0]), (3, 3, 3))
    e = np.array([[2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [2.0, 1.0, 0.0]])
    np.testing.assert_allclose(nees_series(e, np.zeros_like(e), P), [1.0, 1.0, 2.0])
