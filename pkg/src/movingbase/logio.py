"""Reading run logs back and recomputing their metrics."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .estimators import Innovation
from .harness import STATE9
from .metrics import RunMetrics, compute_metrics

FILTER_DIMS = {"ekfui": 9, "ekf": 6}


class LogFileError(FileNotFoundError):
    """A run log is missing or unreadable."""


@dataclass
class LogData:
    header: dict[str, list[str]]
    columns: dict[str, np.ndarray] = field(default_factory=dict)

    def first(self, key: str, default: str | None = None) -> str | None:
        values = self.header.get(key)
        return values[0] if values else default

    @property
    def times(self) -> np.ndarray:
        return self.columns["t"]

    def filters(self) -> list[str]:
        return [name for name in FILTER_DIMS if f"{name}_px" in self.columns]

    def stack(self, *names: str) -> np.ndarray:
        n = self.times.shape[0]
        if not names:
            return np.zeros((n, 0))
        return np.column_stack([self.columns[c] for c in names]).reshape(n, len(names))

    def window(self) -> tuple[float, float]:
        margin = float(self.first("scenario.metrics_margin", "0"))
        duration = float(self.first("duration", "0"))
        return (margin, duration - margin)


def resolve_log(path: str | Path) -> Path:
    """Accept a log file or a run directory holding ``log.csv``."""
    path = Path(path)
    if path.is_dir():
        path = path / "log.csv"
    if not path.is_file():
        raise LogFileError(f"log not found: {path}")
    return path


def read_log(path: str | Path) -> LogData:
    path = resolve_log(path)
    header: dict[str, list[str]] = {}
    body = []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition(": ")
                header.setdefault(key, []).append(value)
            else:
                body.append(line)
    rows = list(csv.reader(io.StringIO("".join(body))))
    if not rows:
        raise LogFileError(f"log has no column header: {path}")
    names, data = rows[0], rows[1:]
    columns = {}
    for j, name in enumerate(names):
        columns[name] = np.array([float(r[j]) if r[j] != "" else np.nan for r in data], dtype=float)
    return LogData(header, columns)


def _innovations(log: LogData, name: str) -> list[Innovation]:
    res = log.stack(*(f"{name}_innov_{a}" for a in "xyz"))
    upper = log.stack(*(f"{name}_S_{i}{j}" for i in range(3) for j in range(i, 3)))
    records = []
    for k in np.flatnonzero(np.all(np.isfinite(res), axis=1)):
        S = np.empty((3, 3))
        it = iter(upper[k])
        for i in range(3):
            for j in range(i, 3):
                S[i, j] = S[j, i] = next(it)
        records.append(Innovation(float(log.times[k]), res[k].copy(), S))
    return records


def recompute_metrics(path: str | Path) -> dict[str, RunMetrics]:
    """Metrics of every filter in a log, from its logged columns alone."""
    log = read_log(path)
    truth = log.stack(*(f"true_{s}" for s in STATE9))
    setpoints = log.stack("sp_x", "sp_y", "sp_z")
    saturation = int(float(log.first("saturation_events", "0")))
    out = {}
    for name in log.filters():
        dim = FILTER_DIMS[name]
        out[name] = compute_metrics(
            log.times,
            truth,
            log.stack(*(f"{name}_{s}" for s in STATE9[:dim])),
            innovations=_innovations(log, name),
            setpoints=setpoints,
            window=log.window(),
            saturation_events=saturation,
            nees=log.columns[f"{name}_nees"],
        )
    return out
