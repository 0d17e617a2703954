"""Column-labelled CSV bundles for plotting a run.

Every run gets ``positions.csv``, ``velocities.csv`` and ``trajectory.csv``;
runs on a moving platform also get ``motion.csv`` with the cart's
longitudinal position and velocity next to the drone states.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .logio import LogData, read_log, resolve_log

AXES = "xyz"


def _mocap_velocity(t: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Finite-difference velocity of the raw position samples (NaN where unsampled)."""
    out = np.full_like(p, np.nan)
    ok = np.isfinite(p)
    if ok.sum() >= 2:
        out[ok] = np.gradient(p[ok], t[ok])
    return out


def _write(path: Path, columns: dict[str, np.ndarray]) -> Path:
    names = list(columns)
    data = np.column_stack([columns[n] for n in names]) if names else np.zeros((0, 0))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in data:
            w.writerow(["" if np.isnan(v) else f"{v:.10g}" for v in row])
    return path


def _positions(log: LogData) -> dict[str, np.ndarray]:
    c = log.columns
    cols = {"t": c["t"]}
    for a in AXES:
        cols[f"true_p{a}"] = c[f"true_p{a}"]
        cols[f"mocap_p{a}"] = c[f"meas_p{a}"]
        for name in log.filters():
            cols[f"{name}_p{a}"] = c[f"{name}_p{a}"]
    return cols


def _velocities(log: LogData) -> dict[str, np.ndarray]:
    c = log.columns
    cols = {"t": c["t"]}
    for a in AXES:
        cols[f"true_v{a}"] = c[f"true_v{a}"]
        cols[f"mocap_v{a}"] = _mocap_velocity(c["t"], c[f"meas_p{a}"])
        for name in log.filters():
            cols[f"{name}_v{a}"] = c[f"{name}_v{a}"]
    return cols


def _motion(log: LogData) -> dict[str, np.ndarray]:
    c = log.columns
    cols = _positions(log)
    cols.update({k: v for k, v in _velocities(log).items() if k != "t"})
    heading = np.array([np.cos(c["cart_yaw"]), np.sin(c["cart_yaw"])])
    # longitudinal = along the direction of travel (world x for every built-in profile)
    cols["cart_long_pos"] = c["cart_px"]
    cols["cart_long_vel"] = c["cart_vx"]
    cols["cart_heading_vel"] = heading[0] * c["cart_vx"] + heading[1] * c["cart_vy"]
    cols["cart_yaw"] = c["cart_yaw"]
    return cols


def _trajectory(log: LogData) -> dict[str, np.ndarray]:
    c = log.columns
    n = c["t"].shape[0]
    cols = {"time_index": np.arange(n, dtype=float), "t": c["t"]}
    cols["setpoint_x"], cols["setpoint_y"] = c["sp_x"], c["sp_y"]
    cols["true_px"], cols["true_py"] = c["true_px"], c["true_py"]
    for name in log.filters():
        cols[f"{name}_px"], cols[f"{name}_py"] = c[f"{name}_px"], c[f"{name}_py"]
    return cols


def emit_plot_data(log_path: str | Path, output_dir: str | Path | None = None) -> list[Path]:
    """Write the plot bundles of one run; returns the written paths.

    ``log_path`` is a ``log.csv`` or a run directory. Output goes to
    ``output_dir`` or ``<run dir>/plotdata``. A missing log raises
    ``LogFileError`` (a ``FileNotFoundError``).
    """
    path = resolve_log(log_path)
    log = read_log(path)
    target = Path(output_dir) if output_dir is not None else path.parent / "plotdata"
    target.mkdir(parents=True, exist_ok=True)
    written = [
        _write(target / "positions.csv", _positions(log)),
        _write(target / "velocities.csv", _velocities(log)),
    ]
    if log.first("scenario.profile", "stationary") != "stationary":
        written.append(_write(target / "motion.csv", _motion(log)))
    written.append(_write(target / "trajectory.csv", _trajectory(log)))
    return written
