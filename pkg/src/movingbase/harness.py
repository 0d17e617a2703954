"""Closed-loop scenario runs, CSV logs and the experiment suite.

Seed splitting: a run seeded with ``s`` draws the drone stream from
``SeedSequence(s, spawn_key=(0,))`` and the platform stream from
``SeedSequence(s, spawn_key=(1,))``. Monte-Carlo repetition ``i`` of a
suite with base seed ``s`` uses ``SeedSequence(s, spawn_key=(i,))`` as its
run seed. Noise is drawn before the run starts, so two runs with the same
seed see the same measurement noise whatever the feedback estimator.
"""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .actuation import N_ROTORS, Mixer, pwm_to_thrust, thrust_to_pwm
from .config import ConfigError, Scenario, VehicleConfig, builtin_scenarios, load_scenario, load_vehicle_config
from .controller import CascadeController, Setpoint, attitude_moments
from .dynamics import IntegrationDivergedError, rk4_inertial_step
from .estimators import (
    AttitudeState,
    FilterDivergedError,
    SingularInnovationError,
    attitude_ekf_step,
    ekf_baseline_step,
    ekfui_step,
    init_filter,
)
from .metrics import RunMetrics, compute_metrics
from .world import (
    DRONE_STREAM,
    PLATFORM_STREAM,
    StreamSchedule,
    make_measurement,
    platform_state_at,
    relative_truth,
    rot_z,
    synchronize,
)

log = logging.getLogger(__name__)

ESTIMATORS = ("ekf", "ekfui", "both")
OUTPUT_ROOT_ENV = "MOVINGBASE_OUTPUT_ROOT"
AXES = "xyz"


class RunAborted(RuntimeError):
    """A run stopped early; ``partial`` holds the log up to the failure."""

    def __init__(self, message: str, partial: "RunLog | None" = None, kind: str = "filter_divergence"):
        super().__init__(message)
        self.partial = partial
        self.kind = kind


def seed_sequence(seed, *spawn_key: int) -> np.random.SeedSequence:
    """Deterministic child of ``seed`` (an int or a SeedSequence)."""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + spawn_key)
    return np.random.SeedSequence(int(seed), spawn_key=spawn_key)


def seed_label(seed) -> str:
    if isinstance(seed, np.random.SeedSequence):
        return f"{seed.entropy}/{'.'.join(str(k) for k in seed.spawn_key)}"
    return str(seed)


@dataclass
class RunLog:
    """Everything one closed-loop run produced, sampled at the filter rate."""

    scenario: Scenario
    vehicle: VehicleConfig
    seed_label: str
    estimator: str
    feedback: str
    duration: float
    dt_sim: float
    times: np.ndarray
    setpoints: np.ndarray
    truth: np.ndarray  # (px, vx, py, vy, pz, vz, d1, d2, d3) relative to the platform
    truth_angles: np.ndarray
    cart: np.ndarray  # px, py, pz, vx, vy, vz, yaw (world)
    meas: np.ndarray  # px, py, pz, phi, theta, psi; NaN where no sample was used
    meas_index: np.ndarray
    attitude: np.ndarray
    commands: np.ndarray  # roll_cmd, pitch_cmd, pwm, u1, u2, u3, u4
    estimates: dict[str, np.ndarray] = field(default_factory=dict)
    covariances: dict[str, np.ndarray] = field(default_factory=dict)
    innovations: dict[str, list] = field(default_factory=dict)
    checksums: dict[str, str] = field(default_factory=dict)
    drone_msgs: list = field(default_factory=list)
    platform_msgs: list = field(default_factory=list)
    sync: list = field(default_factory=list)
    saturation_events: int = 0
    bounds_violations: int = 0
    controller_faults: int = 0
    metrics: dict[str, RunMetrics] = field(default_factory=dict)
    error: str | None = None

    @property
    def window(self) -> tuple[float, float]:
        m = self.scenario.metrics_margin
        return (m, self.duration - m)

    def filters(self) -> list[str]:
        return [name for name in ("ekfui", "ekf") if name in self.estimates]

    def truth_d(self) -> np.ndarray:
        return self.truth[:, 6:9]


def _trim(log_: RunLog, n: int) -> RunLog:
    for name in ("times", "setpoints", "truth", "truth_angles", "cart", "meas", "meas_index", "attitude", "commands"):
        setattr(log_, name, getattr(log_, name)[:n])
    for d in (log_.estimates, log_.covariances):
        for key in d:
            d[key] = d[key][:n]
    return log_


def simulate(
    scenario: Scenario,
    vehicle: VehicleConfig | None = None,
    seed=42,
    estimator: str = "both",
    feedback: str | None = None,
    duration: float | None = None,
    dt_sim: float | None = None,
) -> RunLog:
    """Fly the scenario's takeoff/hold/land script in closed loop.

    ``estimator`` selects which translational filters run; ``feedback`` names
    the one whose estimate drives the controller (defaults to EKF-UI whenever
    it runs). Raises ``RunAborted`` carrying the partial log on divergence.
    """
    vehicle = vehicle or load_vehicle_config()
    if estimator not in ESTIMATORS:
        raise ConfigError(f"estimator must be one of {ESTIMATORS}, got {estimator!r}")
    if feedback is None:
        feedback = "ekf" if estimator == "ekf" else "ekfui"
    if feedback not in ("ekf", "ekfui") or (estimator != "both" and feedback != estimator):
        raise ConfigError(f"feedback {feedback!r} is not available with estimator {estimator!r}")
    duration = scenario.duration if duration is None else float(duration)
    dt = scenario.dt_sim if dt_sim is None else float(dt_sim)
    fcfg, acfg = vehicle.filter, vehicle.attitude_filter
    ts = fcfg.ts
    n_sub = int(round(ts / dt))
    if n_sub < 1 or abs(n_sub * dt - ts) > 1e-9:
        raise ConfigError(f"dt_sim={dt} must divide the filter step ts={ts}")
    if duration < 0:
        raise ConfigError("duration must be non-negative")
    n_ticks = int(math.floor(duration / ts + 1e-9)) + 1 if duration > 0 else 0

    params, curve = vehicle.params, vehicle.curve
    mc = scenario.measurement
    motion = scenario.platform
    drone_sched = StreamSchedule.draw(
        mc.drone_rate, mc.drone_phase, mc.jitter_sigma, mc.pos_sigma, mc.angle_sigma,
        duration, np.random.default_rng(seed_sequence(seed, 0)),
    )
    plat_sched = StreamSchedule.draw(
        mc.platform_rate, mc.platform_phase, mc.jitter_sigma, mc.platform_pos_sigma, mc.platform_angle_sigma,
        duration, np.random.default_rng(seed_sequence(seed, 1)),
    )
    run_ui = estimator in ("ekfui", "both")
    run_ekf = estimator in ("ekf", "both")

    out = RunLog(
        scenario=scenario, vehicle=vehicle, seed_label=seed_label(seed), estimator=estimator,
        feedback=feedback, duration=duration, dt_sim=dt,
        times=np.arange(n_ticks) * ts,
        setpoints=np.zeros((n_ticks, 3)),
        truth=np.zeros((n_ticks, 9)),
        truth_angles=np.zeros((n_ticks, 3)),
        cart=np.zeros((n_ticks, 7)),
        meas=np.full((n_ticks, 6), np.nan),
        meas_index=np.full(n_ticks, -1, dtype=int),
        attitude=np.zeros((n_ticks, 3)),
        commands=np.zeros((n_ticks, 7)),
    )
    hashes = {}
    if run_ui:
        out.estimates["ekfui"] = np.zeros((n_ticks, 9))
        out.covariances["ekfui"] = np.zeros((n_ticks, 9, 9))
        out.innovations["ekfui"] = []
        hashes["ekfui"] = hashlib.sha256()
    if run_ekf:
        out.estimates["ekf"] = np.zeros((n_ticks, 6))
        out.covariances["ekf"] = np.zeros((n_ticks, 6, 6))
        out.innovations["ekf"] = []
        hashes["ekf"] = hashlib.sha256()

    x = np.zeros(12)  # world-frame truth; drone starts on the cart floor at its origin
    mixer = Mixer(params)
    ctrl = CascadeController(vehicle.gains, curve, params.mass, params.g)
    pwm = thrust_to_pwm(params.mass * params.g / N_ROTORS, curve)
    u1 = N_ROTORS * pwm_to_thrust(pwm, curve) / params.mass
    roll_cmd = pitch_cmd = 0.0
    moments = np.zeros(3)
    latest = [None]

    def emit(t_now: float) -> None:
        due_d = drone_sched.due(t_now)
        due_p = plat_sched.due(t_now)
        if not (due_d or due_p):
            return
        ps_now = platform_state_at(motion, t_now)
        for i in due_d:
            out.drone_msgs.append(make_measurement(
                x, ps_now, drone_sched.stamps[i], DRONE_STREAM, drone_sched.pos_noise[i], drone_sched.angle_noise[i]))
            latest[0] = len(out.drone_msgs) - 1
        for i in due_p:
            out.platform_msgs.append(make_measurement(
                x, ps_now, plat_sched.stamps[i], PLATFORM_STREAM, plat_sched.pos_noise[i], plat_sched.angle_noise[i]))

    if n_ticks:
        emit(0.0)
    ui = ekf = att = None
    prev_true_angles = np.zeros(3)
    k = 0
    try:
        for k in range(n_ticks):
            t = k * ts
            idx, latest[0] = latest[0], None
            y = out.drone_msgs[idx] if idx is not None else None
            y_pos = y.position if y is not None else None
            y_ang = y.orientation if y is not None else None
            if y is not None:
                out.meas[k, :3] = y.position
                out.meas[k, 3:] = y.orientation
                out.meas_index[k] = idx
            for h in hashes.values():
                h.update(y_pos.tobytes() if y_pos is not None else b"-")

            if k == 0:
                att = AttitudeState.from_angles(y_ang if y_ang is not None else np.zeros(3), acfg)
                p_init = y_pos if y_pos is not None else np.zeros(3)
                ui = init_filter(p_init, fcfg, True) if run_ui else None
                ekf = init_filter(p_init, fcfg, False) if run_ekf else None
            else:
                angles = att.angles if fcfg.attitude_source == "estimate" else tuple(prev_true_angles)
                att = attitude_ekf_step(att, moments / n_sub, y_ang, acfg)
                if run_ui:
                    ui = ekfui_step(ui, u1, angles, y_pos, fcfg)
                    if ui.innovation is not None:
                        out.innovations["ekfui"].append(replace(ui.innovation, time=t))
                if run_ekf:
                    ekf = ekf_baseline_step(ekf, u1, angles, y_pos, fcfg)
                    if ekf.innovation is not None:
                        out.innovations["ekf"].append(replace(ekf.innovation, time=t))

            ps = platform_state_at(motion, t)
            rel = relative_truth(x, ps)
            prev_true_angles = rel.angles
            out.truth[k, 0:6:2] = rel.position
            out.truth[k, 1:6:2] = rel.velocity
            out.truth[k, 6:9] = rot_z(-ps.yaw) @ ps.accel
            out.truth_angles[k] = rel.angles
            out.cart[k, 0:3] = ps.pos
            out.cart[k, 3:6] = ps.vel
            out.cart[k, 6] = ps.yaw
            out.attitude[k] = att.angles
            if run_ui:
                out.estimates["ekfui"][k] = ui.estimate
                out.covariances["ekfui"][k] = ui.covariance
            if run_ekf:
                out.estimates["ekf"][k] = ekf.estimate
                out.covariances["ekf"][k] = ekf.covariance

            fb = ui if feedback == "ekfui" else ekf
            sp = Setpoint(*scenario.setpoint_xy, scenario.altitude_setpoint(t))
            out.setpoints[k] = (sp.xd, sp.yd, sp.zd)
            if not scenario.bounds.contains((sp.xd, sp.yd, sp.zd)):
                out.bounds_violations += 1
            pos, vel = fb.position, fb.velocity
            roll_cmd, pitch_cmd = ctrl.horizontal_control(sp, pos[:2], vel[:2], att.psi, ts)
            pwm = ctrl.vertical_control(sp, pos[2], vel[2], ts)
            u1 = N_ROTORS * pwm_to_thrust(pwm, curve) / params.mass
            if k == n_ticks - 1:
                out.commands[k, :4] = (roll_cmd, pitch_cmd, pwm, u1)
                break

            moments = np.zeros(3)
            base = k * n_sub
            for j in range(n_sub):
                u2, u3, u4 = attitude_moments(roll_cmd, pitch_cmd, x, vehicle.attitude_loop)
                applied = mixer.apply((u1, u2, u3, u4))
                moments += applied[1:]
                x = rk4_inertial_step(x, applied, params, dt, step=base + j)
                emit((base + j + 1) * dt)
            out.commands[k] = (roll_cmd, pitch_cmd, pwm, u1, *(moments / n_sub))
    except (FilterDivergedError, SingularInnovationError, IntegrationDivergedError) as exc:
        out.error = f"{type(exc).__name__}: {exc}"
        # row k was never filled
        _finish(_trim(out, k), hashes, mixer, ctrl)
        raise RunAborted(out.error, out, kind=type(exc).__name__) from exc
    _finish(out, hashes, mixer, ctrl)
    return out


def _finish(out: RunLog, hashes, mixer: Mixer, ctrl: CascadeController) -> None:
    out.saturation_events = mixer.saturation_events + ctrl.saturation_events
    out.controller_faults = int(ctrl.fault)
    out.checksums = {name: h.hexdigest() for name, h in hashes.items()}
    out.sync = synchronize(out.drone_msgs, out.platform_msgs, out.scenario.measurement.sync_window)
    out.metrics = {name: run_metrics(out, name) for name in out.filters()}


def run_metrics(out: RunLog, name: str) -> RunMetrics:
    return compute_metrics(
        out.times,
        out.truth,
        out.estimates[name],
        covariances=out.covariances[name],
        innovations=out.innovations[name],
        setpoints=out.setpoints,
        window=out.window,
        saturation_events=out.saturation_events,
    )


# --- CSV output -------------------------------------------------------------

STATE9 = ("px", "vx", "py", "vy", "pz", "vz", "d1", "d2", "d3")


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    v = float(v)
    if math.isnan(v):
        return ""
    return f"{v:.10g}"


def log_columns(filters: list[str]) -> list[str]:
    cols = ["t", "sp_x", "sp_y", "sp_z"]
    cols += [f"true_{s}" for s in STATE9]
    cols += ["true_phi", "true_theta", "true_psi"]
    cols += ["cart_px", "cart_py", "cart_pz", "cart_vx", "cart_vy", "cart_vz", "cart_yaw"]
    cols += ["meas_px", "meas_py", "meas_pz", "meas_phi", "meas_theta", "meas_psi"]
    cols += ["sync_cart_px", "sync_cart_py", "sync_cart_pz", "sync_dt", "sync_stale"]
    for name in filters:
        dim = 9 if name == "ekfui" else 6
        cols += [f"{name}_{s}" for s in STATE9[:dim]]
        cols += [f"{name}_sd_{s}" for s in STATE9[:dim]]
        cols += [f"{name}_nees"]
        cols += [f"{name}_innov_{a}" for a in AXES]
        cols += [f"{name}_S_{i}{j}" for i in range(3) for j in range(i, 3)]
    cols += ["att_phi", "att_theta", "att_psi"]
    cols += ["cmd_roll", "cmd_pitch", "cmd_pwm", "u1", "u2", "u3", "u4"]
    return cols


def header_lines(out: RunLog) -> list[str]:
    items = [
        ("schema", "movingbase-log/1"),
        ("seed", out.seed_label),
        ("estimator", out.estimator),
        ("feedback", out.feedback),
        ("duration", repr(out.duration)),
        ("dt_sim", repr(out.dt_sim)),
    ]
    items += [(f"stream_checksum.{k}", v) for k, v in sorted(out.checksums.items())]
    items += [
        ("saturation_events", str(out.saturation_events)),
        ("bounds_violations", str(out.bounds_violations)),
        ("controller_faults", str(out.controller_faults)),
    ]
    items += out.scenario.header_items() + out.vehicle.header_items()
    if out.error:
        items.append(("error", out.error))
    return [f"# {k}: {v}" for k, v in items]


def render_log(out: RunLog) -> str:
    filters = out.filters()
    buf = io.StringIO()
    for line in header_lines(out):
        buf.write(line + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(log_columns(filters))
    sync_by_msg = {id(r.drone): r for r in out.sync}
    innov_at = {name: {round(i.time / out.vehicle.filter.ts): i for i in out.innovations[name]} for name in filters}
    nees = {name: out.metrics[name].nees for name in filters}
    for k, t in enumerate(out.times):
        row = [t, *out.setpoints[k], *out.truth[k], *out.truth_angles[k], *out.cart[k], *out.meas[k]]
        rec = None
        if out.meas_index[k] >= 0:
            rec = sync_by_msg.get(id(out.drone_msgs[out.meas_index[k]]))
        if rec is not None and rec.platform is not None:
            row += [*rec.platform.position, rec.dt, "1" if rec.stale else "0"]
        elif rec is not None:
            row += [math.nan] * 4 + ["1"]
        else:
            row += [math.nan] * 4 + [""]
        for name in filters:
            est, cov = out.estimates[name][k], out.covariances[name][k]
            row += [*est, *np.sqrt(np.clip(np.diag(cov), 0.0, None)), nees[name][k]]
            inn = innov_at[name].get(k)
            if inn is not None:
                S = inn.covariance
                row += [*inn.residual, *(S[i, j] for i in range(3) for j in range(i, 3))]
            else:
                row += [math.nan] * 9
        row += [*out.attitude[k], *out.commands[k]]
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def render_metrics_table(metrics: dict[str, RunMetrics], extra: list[tuple[str, float]] = ()) -> str:
    """``estimator,metric,axis,value`` rows; ``extra`` adds run-level counters."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["estimator", "metric", "axis", "value"])
    for name, m in metrics.items():
        for metric, axis, value in m.rows():
            w.writerow([name, metric, axis, _fmt(value)])
    for metric, value in extra:
        w.writerow(["run", metric, "", _fmt(value)])
    return buf.getvalue()


def render_metrics(out: RunLog) -> str:
    return render_metrics_table(
        {name: out.metrics[name] for name in out.filters()},
        [
            ("bounds_violations", out.bounds_violations),
            ("controller_faults", out.controller_faults),
            ("stale_platform_records", sum(1 for r in out.sync if r.stale)),
        ],
    )


def write_run(out: RunLog, directory: str | Path) -> dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {"log": directory / "log.csv", "metrics": directory / "metrics.csv"}
    paths["log"].write_text(render_log(out))
    paths["metrics"].write_text(render_metrics(out))
    return paths


def write_error_record(directory: str | Path, kind: str, message: str) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / "error.csv"
    path.write_text(f"kind,message\n{kind},\"{message.replace(chr(34), chr(39))}\"\n")
    return path


# --- run configuration --------------------------------------------------------


def default_output_root() -> Path:
    """``$MOVINGBASE_OUTPUT_ROOT`` when set, else ``./runs``."""
    return Path(os.environ.get(OUTPUT_ROOT_ENV) or "runs")


@dataclass
class RunConfig:
    scenario: str | Path = "stationary"
    estimator: str = "both"
    feedback: str | None = None
    seed: int = 42
    dt_sim: float | None = None
    duration: float | None = None
    output_dir: str | Path | None = None
    repetitions: int = 1
    vehicle_config: str | Path | None = None

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ConfigError(f"estimator must be one of {ESTIMATORS}")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be at least 1")
        if self.duration is not None and self.duration < 0:
            raise ConfigError("duration must be non-negative")

    def resolved_output_dir(self) -> Path:
        if self.output_dir is not None:
            return Path(self.output_dir)
        return default_output_root() / f"{Path(str(self.scenario)).stem}_seed{self.seed}"


@dataclass
class RunResult:
    logs: list[RunLog]
    paths: list[dict[str, Path]]

    @property
    def metrics(self) -> list[dict[str, RunMetrics]]:
        return [lg.metrics for lg in self.logs]


def run_scenario(cfg: RunConfig) -> RunResult:
    """Run ``cfg.repetitions`` seeded repetitions of one scenario and write their logs.

    With one repetition the seed is used as given; otherwise repetition ``i``
    uses the split seed ``(seed, i)``.
    """
    scenario = load_scenario(cfg.scenario)
    vehicle = load_vehicle_config(cfg.vehicle_config)
    if cfg.dt_sim is not None and cfg.dt_sim > vehicle.filter.ts:
        raise ConfigError("dt_sim must not exceed the filter step")
    root = cfg.resolved_output_dir()
    logs, paths = [], []
    for rep in range(cfg.repetitions):
        seed = cfg.seed if cfg.repetitions == 1 else seed_sequence(cfg.seed, rep)
        target = root if cfg.repetitions == 1 else root / f"rep_{rep:03d}"
        try:
            out = simulate(scenario, vehicle, seed, cfg.estimator, cfg.feedback, cfg.duration, cfg.dt_sim)
        except RunAborted as exc:
            if exc.partial is not None:
                write_run(exc.partial, target)
            write_error_record(target, exc.kind, str(exc))
            raise
        logs.append(out)
        paths.append(write_run(out, target))
    return RunResult(logs, paths)


SUITE_SCENARIOS = ("stationary", "x_forward_moderate", "x_forward_high", "yawed_xy_slow", "yawed_xy_fast")


def run_suite(
    output_dir: str | Path,
    seed: int = 42,
    repetitions: int = 3,
    scenarios=SUITE_SCENARIOS,
    vehicle_config: str | Path | None = None,
    duration: float | None = None,
) -> Path:
    """All experiments, each repetition flown once per feedback estimator.

    Both filters run in every flight on the same measurements; the two
    flights of one repetition share the seed. Returns the summary CSV path.
    """
    vehicle = load_vehicle_config(vehicle_config)
    root = Path(output_dir)
    rows = []
    for name in scenarios:
        scenario = load_scenario(name)
        for rep in range(repetitions):
            seed_r = seed_sequence(seed, rep)
            for fb in ("ekfui", "ekf"):
                target = root / scenario.name / f"rep_{rep:03d}" / f"feedback_{fb}"
                try:
                    out = simulate(scenario, vehicle, seed_r, "both", fb, duration)
                except RunAborted as exc:
                    if exc.partial is not None:
                        write_run(exc.partial, target)
                    write_error_record(target, exc.kind, str(exc))
                    raise
                write_run(out, target)
                for est in out.filters():
                    for metric, axis, value in out.metrics[est].rows():
                        rows.append([scenario.name, rep, fb, est, metric, axis, _fmt(value)])
    summary = root / "suite_summary.csv"
    root.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scenario", "repetition", "feedback", "estimator", "metric", "axis", "value"])
    w.writerows(rows)
    summary.write_text(buf.getvalue())
    return summary


def available_scenarios() -> list[str]:
    return builtin_scenarios()
