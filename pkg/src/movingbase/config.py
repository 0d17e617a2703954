"""Loading of vehicle/filter/controller configs and scenario files.

Both file kinds are INI-style ``key = value`` text in SI units (angles given
in degrees are named ``*_deg``). See README.md for the schema.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .actuation import ThrustCurve, load_thrust_curve
from .controller import AttitudeLoopGains, ControllerGains, PIDGains
from .dynamics import InertiaParams
from .estimators import AttitudeFilterConfig, FilterConfig
from .world import MeasurementConfig, PlatformMotion, Segment, WorldBounds

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """A config or scenario file could not be parsed or validated."""


def _parser() -> configparser.ConfigParser:
    return configparser.ConfigParser(
        comment_prefixes=("#", ";"), inline_comment_prefixes=("#", ";"), interpolation=None
    )


def _read(path: Path) -> configparser.ConfigParser:
    cp = _parser()
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    version = cp.getint("meta", "schema_version", fallback=SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"{path}: unsupported schema_version {version}")
    return cp


def _floats(section: configparser.SectionProxy, *names: str) -> dict[str, float]:
    out = {}
    for name in names:
        if name in section:
            try:
                out[name] = float(section[name])
            except ValueError as exc:
                raise ConfigError(f"[{section.name}] {name}: {exc}") from exc
    return out


def _axis_values(section: configparser.SectionProxy, *names: str) -> dict[str, float | tuple[float, ...]]:
    """Scalars, or ``x y z`` triples for per-axis values."""
    out = {}
    for name in names:
        if name not in section:
            continue
        parts = section[name].replace(",", " ").split()
        try:
            values = tuple(float(p) for p in parts)
        except ValueError as exc:
            raise ConfigError(f"[{section.name}] {name}: {exc}") from exc
        if len(values) not in (1, 3):
            raise ConfigError(f"[{section.name}] {name}: expected one value or three (x y z), got {len(values)}")
        out[name] = values[0] if len(values) == 1 else values
    return out


def data_path(name: str) -> Path:
    return Path(str(resources.files("movingbase") / "data" / name))


def scenario_path(name: str) -> Path:
    return Path(str(resources.files("movingbase") / "scenarios" / f"{name}.cfg"))


def builtin_scenarios() -> list[str]:
    folder = resources.files("movingbase") / "scenarios"
    return sorted(p.name[:-4] for p in folder.iterdir() if p.name.endswith(".cfg"))


@dataclass(frozen=True)
class VehicleConfig:
    params: InertiaParams
    curve: ThrustCurve
    filter: FilterConfig
    attitude_filter: AttitudeFilterConfig
    gains: ControllerGains
    attitude_loop: AttitudeLoopGains
    source: str = "<defaults>"

    def header_items(self) -> list[tuple[str, str]]:
        """Flat (key, value) listing of every gain and covariance for run headers."""
        items = [("config", self.source)]
        for name, value in vars(self.params).items():
            items.append((f"vehicle.{name}", repr(value)))
        items.append(("vehicle.thrust_curve_mode", self.curve.mode))
        f = self.filter
        items += [
            ("filter.ts", repr(f.ts)),
            ("filter.epsilon_fd", repr(f.epsilon_fd)),
            ("filter.joseph", str(f.joseph)),
            ("filter.attitude_source", f.attitude_source),
            ("filter.q_core_diag", " ".join(repr(v) for v in np.diag(f.q_core))),
            ("filter.q_d_diag", " ".join(repr(v) for v in np.diag(f.q_d))),
            ("filter.r_diag", " ".join(repr(v) for v in np.diag(f.r))),
            ("filter.p0_diag", " ".join(repr(v) for v in np.diag(f.p0))),
        ]
        a = self.attitude_filter
        items += [
            ("attitude_filter.q_diag", " ".join(repr(v) for v in np.diag(a.q))),
            ("attitude_filter.r_diag", " ".join(repr(v) for v in np.diag(a.r))),
            ("attitude_filter.p0_diag", " ".join(repr(v) for v in np.diag(a.p0))),
        ]
        g = self.gains
        items += [
            ("controller.kp_xy", repr(g.kp_xy)),
            ("controller.kp_z", repr(g.kp_z)),
            ("controller.vel_xy", repr(g.vel_xy)),
            ("controller.vel_z", repr(g.vel_z)),
            ("controller.tilt_rate_limit", repr(g.tilt_rate_limit)),
            ("controller.tilt_max", repr(g.tilt_max)),
            ("attitude_loop", repr(self.attitude_loop)),
        ]
        return items


def _pid(section: configparser.SectionProxy, prefix: str) -> PIDGains:
    v = _floats(section, *(f"{prefix}_{k}" for k in ("kp", "ki", "kd", "i_limit", "d_tau")))
    try:
        return PIDGains(**{k[len(prefix) + 1:]: val for k, val in v.items()})
    except TypeError as exc:
        raise ConfigError(f"[{section.name}] {prefix}: {exc}") from exc


def load_vehicle_config(path: str | Path | None = None) -> VehicleConfig:
    """Load a vehicle config; ``None`` loads the packaged defaults."""
    path = Path(path) if path is not None else data_path("default.cfg")
    cp = _read(path)
    try:
        veh = cp["vehicle"]
        params = InertiaParams(**_floats(
            veh, "mass", "Ix", "Iy", "Iz", "g", "arm_length", "thrust_coeff", "yaw_coeff"
        ))
        curve_file = veh.get("thrust_curve", "thrust_curve.txt")
        curve_path = Path(curve_file)
        if not curve_path.is_absolute():
            curve_path = path.parent / curve_path
        curve = load_thrust_curve(curve_path, veh.get("interpolation", "pchip"))

        fs = cp["filter"]
        fv = _floats(fs, "ts", "epsilon_fd")
        fv.update(_axis_values(fs, "q_pos", "q_vel", "q_d", "r_pos", "p0_pos", "p0_vel", "p0_d"))
        filt = FilterConfig.diagonal(
            fv["q_pos"], fv["q_vel"], fv["q_d"], fv["r_pos"], fv["p0_pos"], fv["p0_vel"], fv["p0_d"],
            ts=fv.get("ts", 0.01),
            epsilon_fd=fv.get("epsilon_fd", 1e-6),
            g=params.g,
            joseph=fs.getboolean("joseph", fallback=False),
            attitude_source=fs.get("attitude_source", "estimate"),
        )

        av = _floats(cp["attitude_filter"], "q_angle", "q_rate", "r_angle", "p0_angle", "p0_rate")
        att = AttitudeFilterConfig.diagonal(
            av["q_angle"], av["q_rate"], av["r_angle"], av["p0_angle"], av["p0_rate"],
            coupling=params.coupling, ts=filt.ts, epsilon_fd=filt.epsilon_fd,
        )

        cs = cp["controller"]
        gains = ControllerGains(
            **_floats(cs, "kp_xy", "kp_z", "tilt_rate_limit", "tilt_max"),
            vel_xy=_pid(cs, "vel_xy"),
            vel_z=_pid(cs, "vel_z"),
        )
        loop = AttitudeLoopGains(**_floats(cp["attitude_loop"], "kp", "kd", "kd_yaw"))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}") from exc
    return VehicleConfig(params, curve, filt, att, gains, loop, source=str(path))


@dataclass(frozen=True)
class Scenario:
    name: str
    platform: PlatformMotion
    measurement: MeasurementConfig = field(default_factory=MeasurementConfig)
    duration: float = 19.0
    dt_sim: float = 0.002
    hover_altitude: float = 0.35
    takeoff_time: float = 2.0
    landing_time: float = 2.0
    metrics_margin: float = 3.0
    setpoint_xy: tuple[float, float] = (0.0, 0.0)
    bounds: WorldBounds = field(default_factory=WorldBounds)
    source: str = "<inline>"

    def __post_init__(self):
        if self.duration < 0:
            raise ConfigError("duration must be non-negative")
        if not 0 < self.dt_sim <= 0.05:
            raise ConfigError("dt_sim must lie in (0, 0.05]")

    @property
    def profile(self) -> str:
        return self.platform.profile

    def altitude_setpoint(self, t: float) -> float:
        """Linear takeoff ramp, hold, linear landing ramp."""
        h = self.hover_altitude
        if t < self.takeoff_time:
            return h * t / self.takeoff_time
        land_start = self.duration - self.landing_time
        if t > land_start:
            return max(h * (self.duration - t) / self.landing_time, 0.0)
        return h

    def header_items(self) -> list[tuple[str, str]]:
        items = [("scenario", self.name), ("scenario.source", self.source), ("scenario.profile", self.profile)]
        for key in ("duration", "dt_sim", "hover_altitude", "takeoff_time", "landing_time", "metrics_margin"):
            items.append((f"scenario.{key}", repr(getattr(self, key))))
        items.append(("scenario.setpoint_xy", repr(self.setpoint_xy)))
        for seg in self.platform.segments:
            items.append(("platform.segment", f"{seg.t_start!r} {seg.t_end!r} {' '.join(repr(a) for a in seg.accel)}"))
        items += [
            ("platform.yaw_angle", repr(self.platform.yaw_angle)),
            ("platform.yaw_start", repr(self.platform.yaw_start)),
            ("platform.yaw_duration", repr(self.platform.yaw_duration)),
        ]
        for key, value in vars(self.measurement).items():
            items.append((f"measurement.{key}", repr(value)))
        return items


def _segments(text: str) -> tuple[Segment, ...]:
    segs = []
    for line in text.strip().splitlines():
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 5:
            raise ConfigError(f"segment rows need 't_start t_end ax ay az', got {line!r}")
        t0, t1, ax, ay, az = (float(p) for p in parts)
        segs.append(Segment(t0, t1, (ax, ay, az)))
    return tuple(segs)


def load_scenario(path: str | Path) -> Scenario:
    """Parse a scenario file; a bare name selects a packaged scenario."""
    path = Path(path)
    if not path.exists() and path.suffix == "" and scenario_path(str(path)).exists():
        path = scenario_path(str(path))
    cp = _read(path)
    try:
        sc = cp["scenario"]
        plat = cp["platform"] if cp.has_section("platform") else {}
        pv = _floats(plat, "yaw_angle_deg", "yaw_start", "yaw_duration") if plat else {}
        motion = PlatformMotion(
            profile=sc.get("profile", "stationary"),
            segments=_segments(plat.get("segments", "")) if plat else (),
            yaw_angle=math.radians(pv.get("yaw_angle_deg", 0.0)),
            yaw_start=pv.get("yaw_start", 0.0),
            yaw_duration=pv.get("yaw_duration", 1.0),
        )
        meas = MeasurementConfig(**_floats(
            cp["measurement"], *MeasurementConfig.__dataclass_fields__
        )) if cp.has_section("measurement") else MeasurementConfig()
        sv = _floats(sc, "duration", "dt_sim", "hover_altitude", "takeoff_time", "landing_time", "metrics_margin")
        sp = _floats(cp["setpoint"], "x", "y") if cp.has_section("setpoint") else {}
        scenario = Scenario(
            name=sc.get("name", path.stem),
            platform=motion,
            measurement=meas,
            setpoint_xy=(sp.get("x", 0.0), sp.get("y", 0.0)),
            source=path.name,
            **sv,
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}") from exc
    return scenario
