"""Run metrics: RMSE, consistency statistics and smoothness."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2


class AlignmentError(ValueError):
    """Time series passed to the metrics do not line up."""


@dataclass
class RunMetrics:
    pos_rmse: np.ndarray = field(default_factory=lambda: np.zeros(3))
    vel_rmse: np.ndarray = field(default_factory=lambda: np.zeros(3))
    d_rmse: np.ndarray = field(default_factory=lambda: np.zeros(3))
    tracking_rmse: float = 0.0
    nees: np.ndarray = field(default_factory=lambda: np.zeros(0))
    nees_coverage: float = 0.0
    nis: np.ndarray = field(default_factory=lambda: np.zeros(0))
    nis_coverage: float = 0.0
    saturation_events: int = 0
    vel_total_variation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @property
    def vel_rmse_xy(self) -> float:
        """RMSE of the horizontal velocity error vector."""
        return float(np.hypot(self.vel_rmse[0], self.vel_rmse[1]))

    def rows(self) -> list[tuple[str, str, float]]:
        """(metric, axis, value) rows for the summary CSV."""
        out = []
        for name in ("pos_rmse", "vel_rmse", "d_rmse", "vel_total_variation"):
            for axis, value in zip("xyz", getattr(self, name)):
                out.append((name, axis, float(value)))
        out += [
            ("vel_rmse_xy", "", self.vel_rmse_xy),
            ("tracking_rmse", "", self.tracking_rmse),
            ("nees_mean", "", float(self.nees.mean()) if self.nees.size else 0.0),
            ("nees_coverage", "", self.nees_coverage),
            ("nis_mean", "", float(self.nis.mean()) if self.nis.size else 0.0),
            ("nis_coverage", "", self.nis_coverage),
            ("saturation_events", "", float(self.saturation_events)),
        ]
        return out


def chi2_bounds(dof: int, prob: float = 0.95, runs: int = 1) -> tuple[float, float]:
    """Two-sided bounds for the average of ``runs`` chi-square(dof) samples."""
    tail = 0.5 * (1.0 - prob)
    return (
        float(chi2.ppf(tail, dof * runs) / runs),
        float(chi2.ppf(1.0 - tail, dof * runs) / runs),
    )


def rmse(err: np.ndarray, axis: int = 0) -> np.ndarray:
    if err.shape[axis] == 0:
        shape = list(err.shape)
        del shape[axis]
        return np.zeros(shape)
    return np.sqrt(np.mean(np.square(err), axis=axis))


def nees_series(truth: np.ndarray, estimate: np.ndarray, covariances: np.ndarray) -> np.ndarray:
    """Per-step ``e^T P^-1 e`` with ``e = truth - estimate``.

    Singular covariances (states frozen at zero variance) use the pseudo-inverse.
    """
    err = truth - estimate
    if err.shape[0] == 0:
        return np.zeros(0)
    try:
        sol = np.linalg.solve(covariances, err[..., None])[..., 0]
    except np.linalg.LinAlgError:
        sol = np.einsum("nij,nj->ni", np.linalg.pinv(covariances, hermitian=True), err)
    return np.einsum("ij,ij->i", err, sol)


def coverage(values: np.ndarray, bounds: tuple[float, float]) -> float:
    if values.size == 0:
        return 0.0
    lo, hi = bounds
    return float(np.mean((values >= lo) & (values <= hi)))


def anees_coverage(nees_runs: np.ndarray, dof: int, prob: float = 0.95) -> tuple[float, np.ndarray]:
    """Fraction of time steps whose run-averaged NEES lies in the chi-square band.

    ``nees_runs`` has one row per Monte-Carlo run. Returns the coverage and the
    averaged series.
    """
    nees_runs = np.atleast_2d(nees_runs)
    avg = nees_runs.mean(axis=0)
    return coverage(avg, chi2_bounds(dof, prob, nees_runs.shape[0])), avg


def compute_metrics(
    times: np.ndarray,
    truth: np.ndarray,
    estimate: np.ndarray,
    covariances: np.ndarray | None = None,
    innovations=(),
    setpoints: np.ndarray | None = None,
    window: tuple[float, float] | None = None,
    saturation_events: int = 0,
    nees: np.ndarray | None = None,
) -> RunMetrics:
    """Compare an estimate series against truth over a time window.

    ``truth`` rows are ``(px, vx, py, vy, pz, vz, d1, d2, d3)``; ``estimate``
    rows are the 9-state or the 6-state layout. RMSE, NEES coverage and
    total variation use only samples inside ``window``; innovation records
    (objects with ``time``, ``residual``, ``covariance``) give the NIS series.
    A precomputed ``nees`` series (e.g. read back from a log) replaces the one
    derived from ``covariances``.
    """
    times = np.asarray(times, dtype=float)
    n = times.shape[0]
    if len(truth) != n or len(estimate) != n:
        raise AlignmentError(f"series lengths differ: times={n}, truth={len(truth)}, estimate={len(estimate)}")
    if covariances is not None and len(covariances) != n:
        raise AlignmentError("covariance series length differs from times")
    if setpoints is not None and len(setpoints) != n:
        raise AlignmentError("setpoint series length differs from times")
    if nees is not None and len(nees) != n:
        raise AlignmentError("NEES series length differs from times")
    if n == 0:
        return RunMetrics(saturation_events=saturation_events)

    truth = np.asarray(truth, dtype=float)
    estimate = np.asarray(estimate, dtype=float)
    dim = estimate.shape[1]
    if window is None:
        mask = np.ones(n, dtype=bool)
    else:
        mask = (times >= window[0]) & (times <= window[1])
    err = truth[:, :dim] - estimate
    m = RunMetrics(saturation_events=saturation_events)
    m.pos_rmse = rmse(err[mask][:, 0:6:2])
    m.vel_rmse = rmse(err[mask][:, 1:6:2])
    if dim == 9:
        m.d_rmse = rmse(err[mask][:, 6:9])
    if setpoints is not None:
        track = truth[mask][:, 0:6:2] - np.asarray(setpoints)[mask]
        m.tracking_rmse = float(np.sqrt(np.mean(np.sum(track * track, axis=1)))) if mask.any() else 0.0
    if nees is not None:
        m.nees = np.asarray(nees, dtype=float)
    elif covariances is not None:
        m.nees = nees_series(truth[:, :dim], estimate, np.asarray(covariances))
    if m.nees.size:
        m.nees_coverage = coverage(m.nees[mask], chi2_bounds(dim))
    records = list(innovations)
    if records:
        m.nis = np.array([float(r.residual @ np.linalg.solve(r.covariance, r.residual)) for r in records])
        rec_t = np.array([r.time for r in records])
        in_win = np.ones(len(records), dtype=bool) if window is None else (rec_t >= window[0]) & (rec_t <= window[1])
        m.nis_coverage = coverage(m.nis[in_win], chi2_bounds(3))
    v = estimate[mask][:, 1:6:2]
    m.vel_total_variation = np.abs(np.diff(v, axis=0)).sum(axis=0) if v.shape[0] > 1 else np.zeros(3)
    return m
