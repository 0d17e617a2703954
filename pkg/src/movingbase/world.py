"""Platform motion, the two motion-capture streams and their synchronization.

Conventions: the platform frame sits at the cart origin with its z axis
vertical and heading ``yaw`` in the world. Relative drone coordinates are
``Rz(-yaw) @ (p_world - p_cart)``. Acceleration schedules are given in the
world frame.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dynamics import wrap_angle

DRONE_STREAM = "drone_stream"
PLATFORM_STREAM = "platform_stream"
PROFILES = ("stationary", "x_forward", "yawed_xy")


@dataclass(frozen=True)
class Segment:
    t_start: float
    t_end: float
    accel: tuple[float, float, float]

    def __post_init__(self):
        if not self.t_end > self.t_start:
            raise ValueError(f"segment must have t_end > t_start, got [{self.t_start}, {self.t_end}]")
        object.__setattr__(self, "accel", tuple(float(a) for a in self.accel))
        if len(self.accel) != 3 or not all(math.isfinite(a) for a in self.accel):
            raise ValueError("segment acceleration must be a finite 3-vector")


@dataclass(frozen=True)
class PlatformState:
    accel: np.ndarray
    vel: np.ndarray
    pos: np.ndarray
    yaw: float
    yaw_rate: float = 0.0


@dataclass(frozen=True)
class PlatformMotion:
    profile: str = "stationary"
    segments: tuple[Segment, ...] = ()
    yaw_angle: float = 0.0
    yaw_start: float = 0.0
    yaw_duration: float = 1.0

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ValueError(f"unknown profile {self.profile!r}; expected one of {PROFILES}")
        segs = tuple(self.segments)
        object.__setattr__(self, "segments", segs)
        for prev, nxt in zip(segs, segs[1:]):
            if nxt.t_start < prev.t_end:
                raise ValueError("segments must be time-ordered and non-overlapping")
        dv = self.velocity_change()
        if np.max(np.abs(dv)) > 1e-9:
            raise ValueError(f"schedule leaves the platform moving (net velocity {dv.tolist()})")
        if self.yaw_angle != 0.0 and not self.yaw_duration > 0:
            raise ValueError("yaw_duration must be positive")

    def velocity_change(self) -> np.ndarray:
        """Integral of the acceleration schedule over all segments."""
        total = np.zeros(3)
        for s in self.segments:
            total += np.array(s.accel) * (s.t_end - s.t_start)
        return total

    def yaw_at(self, t: float) -> tuple[float, float]:
        if self.yaw_angle == 0.0 or t <= self.yaw_start:
            return 0.0, 0.0
        if t >= self.yaw_start + self.yaw_duration:
            return self.yaw_angle, 0.0
        rate = self.yaw_angle / self.yaw_duration
        return rate * (t - self.yaw_start), rate


def platform_state_at(pm: PlatformMotion, t: float) -> PlatformState:
    """Exact state of a piecewise-constant acceleration schedule at time ``t``."""
    if t < 0:
        raise ValueError("t must be non-negative")
    acc = np.zeros(3)
    vel = np.zeros(3)
    pos = np.zeros(3)
    t_prev = 0.0
    for s in pm.segments:
        if t <= s.t_start:
            break
        a = np.array(s.accel)
        if t < s.t_end:
            acc = a
        # coast up to the segment start, then accelerate until min(t, t_end)
        pos += vel * (s.t_start - t_prev)
        tau = min(t, s.t_end) - s.t_start
        pos += vel * tau + 0.5 * a * tau * tau
        vel += a * tau
        t_prev = min(t, s.t_end)
    pos += vel * (t - t_prev)
    yaw, yaw_rate = pm.yaw_at(t)
    return PlatformState(acc, vel, pos, yaw, yaw_rate)


def rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def relative_acceleration_in_platform(ps: PlatformState) -> np.ndarray:
    """Platform acceleration expressed along the platform axes."""
    return rot_z(-ps.yaw) @ ps.accel


@dataclass(frozen=True)
class RelativeTruth:
    position: np.ndarray
    velocity: np.ndarray
    angles: np.ndarray
    rates: np.ndarray

    def as_full_state(self) -> np.ndarray:
        out = np.empty(12)
        out[0:6:2] = self.position
        out[1:6:2] = self.velocity
        out[6::2] = self.angles
        out[7::2] = self.rates
        return out


def relative_truth(world_state: np.ndarray, ps: PlatformState) -> RelativeTruth:
    """Drone state seen from the platform frame.

    Velocity is the time derivative of the relative position, including the
    transport term while the platform is yawing.
    """
    R_t = rot_z(-ps.yaw)
    p_rel = R_t @ (world_state[0:6:2] - ps.pos)
    v_rel = R_t @ (world_state[1:6:2] - ps.vel)
    if ps.yaw_rate:
        # transport term omega x p_rel for a rotation about z
        v_rel = v_rel + ps.yaw_rate * np.array([p_rel[1], -p_rel[0], 0.0])
    angles = np.array([world_state[6], world_state[8], wrap_angle(world_state[10] - ps.yaw)])
    rates = np.array([world_state[7], world_state[9], world_state[11] - ps.yaw_rate])
    return RelativeTruth(p_rel, v_rel, angles, rates)


def world_from_relative(p_rel: np.ndarray, platform_pos: np.ndarray, platform_yaw: float) -> np.ndarray:
    """Compose a platform pose with a relative position to get a world position."""
    return np.asarray(platform_pos) + rot_z(platform_yaw) @ np.asarray(p_rel)


@dataclass(frozen=True)
class WorldBounds:
    outer: tuple[float, float, float] = (1.8, 1.0, 1.0)
    inner: tuple[float, float, float] = (1.7, 0.9, 0.9)

    def __post_init__(self):
        if not all(0 < i < o for i, o in zip(self.inner, self.outer)):
            raise ValueError("inner flight volume must lie strictly inside the outer volume")

    def contains(self, position) -> bool:
        """Inner volume centred on the cart origin in x/y, floor at z = 0."""
        x, y, z = position
        fx, fy, fz = self.inner
        return abs(x) <= fx / 2 and abs(y) <= fy / 2 and 0.0 <= z <= fz


@dataclass(frozen=True)
class TimedMeasurement:
    timestamp: float
    source: str
    position: np.ndarray
    orientation: np.ndarray
    noise_free: bool = False


@dataclass(frozen=True)
class MeasurementConfig:
    drone_rate: float = 100.0
    platform_rate: float = 100.0
    drone_phase: float = 0.0
    platform_phase: float = 0.0037
    pos_sigma: float = 0.001
    angle_sigma: float = 0.002
    platform_pos_sigma: float = 0.001
    platform_angle_sigma: float = 0.002
    jitter_sigma: float = 0.002
    sync_window: float = 0.1

    def __post_init__(self):
        if not (self.drone_rate > 0 and self.platform_rate > 0):
            raise ValueError("stream rates must be positive")
        if min(self.pos_sigma, self.angle_sigma, self.platform_pos_sigma,
               self.platform_angle_sigma, self.jitter_sigma) < 0:
            raise ValueError("noise levels must be non-negative")
        if not self.sync_window > 0:
            raise ValueError("sync_window must be positive")


def make_measurement(
    world_state: np.ndarray,
    ps: PlatformState,
    t: float,
    source: str,
    pos_noise=(0.0, 0.0, 0.0),
    angle_noise=(0.0, 0.0, 0.0),
) -> TimedMeasurement:
    """Pose sample of one stream with the given additive noise."""
    pos_noise = np.asarray(pos_noise, dtype=float)
    angle_noise = np.asarray(angle_noise, dtype=float)
    noise_free = not (np.any(pos_noise) or np.any(angle_noise))
    if source == DRONE_STREAM:
        rel = relative_truth(world_state, ps)
        position = rel.position + pos_noise
        orientation = rel.angles + angle_noise
    elif source == PLATFORM_STREAM:
        position = ps.pos + pos_noise
        orientation = np.array([0.0, 0.0, ps.yaw]) + angle_noise
    else:
        raise ValueError(f"unknown stream {source!r}")
    orientation = np.array([wrap_angle(a) for a in orientation])
    return TimedMeasurement(t, source, position, orientation, noise_free)


def sample_measurements(
    world_state: np.ndarray,
    ps: PlatformState,
    t: float,
    cfg: MeasurementConfig,
    rng: np.random.Generator,
) -> list[TimedMeasurement]:
    """One sample from each stream at ``t``.

    Noise is drawn from ``rng``; the timestamp carries Gaussian jitter of
    ``cfg.jitter_sigma`` (never earlier than zero).
    """
    out = []
    for source, ps_sigma, ang_sigma in (
        (DRONE_STREAM, cfg.pos_sigma, cfg.angle_sigma),
        (PLATFORM_STREAM, cfg.platform_pos_sigma, cfg.platform_angle_sigma),
    ):
        pn = rng.normal(0.0, ps_sigma, 3) if ps_sigma > 0 else np.zeros(3)
        an = rng.normal(0.0, ang_sigma, 3) if ang_sigma > 0 else np.zeros(3)
        stamp = t + (rng.normal(0.0, cfg.jitter_sigma) if cfg.jitter_sigma > 0 else 0.0)
        out.append(make_measurement(world_state, ps, max(stamp, 0.0), source, pn, an))
    return out


def sample_times(rate: float, phase: float, jitter: float, duration: float, rng: np.random.Generator) -> np.ndarray:
    """Jittered timestamps of a stream over ``[0, duration]``, non-decreasing."""
    nominal = np.arange(phase, duration + 1e-12, 1.0 / rate)
    if jitter > 0:
        nominal = nominal + rng.normal(0.0, jitter, nominal.size)
    times = np.maximum.accumulate(np.clip(nominal, 0.0, duration))
    return times


@dataclass(frozen=True)
class SyncedRecord:
    drone: TimedMeasurement
    platform: TimedMeasurement | None
    dt: float | None
    stale: bool


def synchronize(
    drone_msmts: Sequence[TimedMeasurement],
    platform_msmts: Sequence[TimedMeasurement],
    window: float = 0.1,
) -> list[SyncedRecord]:
    """Attach the nearest platform sample to every drone sample.

    A pair is fresh when ``|dt| <= window`` (ties go to the earlier platform
    sample). Otherwise the record is stale and carries the most recent
    platform sample at or before the drone timestamp, if any.
    """
    if not window > 0:
        raise ValueError("window must be positive")
    stamps = [m.timestamp for m in platform_msmts]
    records = []
    for dm in drone_msmts:
        t = dm.timestamp
        i = bisect.bisect_left(stamps, t)
        best = None
        for j in (i - 1, i):
            if 0 <= j < len(stamps):
                gap = abs(stamps[j] - t)
                if best is None or gap < best[1]:
                    best = (j, gap)
        if best is not None and best[1] <= window:
            pm = platform_msmts[best[0]]
            records.append(SyncedRecord(dm, pm, pm.timestamp - t, False))
            continue
        k = bisect.bisect_right(stamps, t) - 1
        last = platform_msmts[k] if k >= 0 else None
        records.append(SyncedRecord(dm, last, None if last is None else last.timestamp - t, True))
    return records


@dataclass
class StreamSchedule:
    """Pre-drawn sample instants, timestamps and noise for one stream.

    Poses are sampled on the nominal grid ``phase + i / rate``; the jitter
    only perturbs the reported timestamps. Drawing everything up front keeps
    the noise realization independent of the closed-loop trajectory, so runs
    that differ only in feedback see the same measurement noise.
    """

    times: np.ndarray
    stamps: np.ndarray
    pos_noise: np.ndarray
    angle_noise: np.ndarray
    cursor: int = field(default=0)

    @classmethod
    def draw(cls, rate, phase, jitter, pos_sigma, angle_sigma, duration, rng) -> "StreamSchedule":
        times = sample_times(rate, phase, 0.0, duration, rng)
        stamps = sample_times(rate, phase, jitter, duration, rng)
        n = times.size
        return cls(times, stamps, rng.normal(0.0, 1.0, (n, 3)) * pos_sigma, rng.normal(0.0, 1.0, (n, 3)) * angle_sigma)

    def due(self, t: float) -> list[int]:
        """Indices of samples whose instants are at or before ``t`` and not yet taken."""
        start = self.cursor
        n = self.times.size
        while self.cursor < n and self.times[self.cursor] <= t + 1e-9:
            self.cursor += 1
        return list(range(start, self.cursor))
