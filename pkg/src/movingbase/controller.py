"""Cascaded PID position controller and the simulated attitude loop."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .actuation import N_ROTORS, ThrustCurve, thrust_to_pwm


@dataclass(frozen=True)
class PIDGains:
    kp: float
    ki: float = 0.0
    kd: float = 0.0
    i_limit: float = math.inf
    d_tau: float = 0.0  # derivative low-pass time constant, s


@dataclass
class PIDState:
    integral: float = 0.0
    prev_error: float | None = None
    d_filtered: float = 0.0


def pid_step(state: PIDState, error: float, gains: PIDGains, dt: float) -> tuple[float, PIDState]:
    """One discrete PID update.

    Trapezoidal integral clamped to ``+-i_limit``; derivative on error through a
    first-order low-pass. The first call uses the current error as the
    previous sample, so there is no derivative kick.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    prev = error if state.prev_error is None else state.prev_error
    integral = state.integral + 0.5 * (error + prev) * dt
    integral = min(max(integral, -gains.i_limit), gains.i_limit)
    raw_d = (error - prev) / dt
    alpha = dt / (gains.d_tau + dt)
    d_filtered = state.d_filtered + alpha * (raw_d - state.d_filtered)
    out = gains.kp * error + gains.ki * integral + gains.kd * d_filtered
    return out, PIDState(integral, error, d_filtered)


@dataclass(frozen=True)
class ControllerGains:
    kp_xy: float = 1.2
    kp_z: float = 1.5
    vel_xy: PIDGains = PIDGains(kp=0.25, ki=0.05, kd=0.0, i_limit=0.5, d_tau=0.02)
    vel_z: PIDGains = PIDGains(kp=4.0, ki=1.0, kd=0.0, i_limit=1.0, d_tau=0.02)
    tilt_rate_limit: float = 1.5  # rad/s
    tilt_max: float = 0.35  # rad

    def __post_init__(self):
        if not self.tilt_rate_limit > 0:
            raise ValueError("tilt_rate_limit must be positive")
        if not 0 < self.tilt_max < math.pi / 2:
            raise ValueError("tilt_max must lie in (0, pi/2)")


@dataclass(frozen=True)
class AttitudeLoopGains:
    kp: float = 400.0
    kd: float = 40.0
    kd_yaw: float = 10.0


@dataclass(frozen=True)
class Setpoint:
    xd: float
    yd: float
    zd: float
    yaw_d: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.xd, self.yd, self.zd, self.yaw_d)):
            raise ValueError("setpoint must be finite")


def _clamp(v: float, lo: float, hi: float) -> float:
    return min(max(v, lo), hi)


@dataclass
class CascadeController:
    """Horizontal and vertical cascades for one vehicle (single owner)."""

    gains: ControllerGains
    curve: ThrustCurve
    mass: float
    g: float = 9.81
    pid_x: PIDState = field(default_factory=PIDState)
    pid_y: PIDState = field(default_factory=PIDState)
    pid_z: PIDState = field(default_factory=PIDState)
    roll_cmd: float = 0.0
    pitch_cmd: float = 0.0
    fault: bool = False
    saturation_events: int = 0

    def horizontal_control(self, sp: Setpoint, pos, vel_est, yaw: float, dt: float) -> tuple[float, float]:
        """Roll and pitch commands (rad) from position and estimated velocity.

        The velocity error is rotated into the heading frame by ``-yaw``; the
        body-x error drives pitch and the body-y error drives roll with
        opposite sign.
        """
        if not dt > 0:
            raise ValueError("dt must be positive")
        x, y = pos
        vx, vy = vel_est
        if not all(math.isfinite(v) for v in (x, y, vx, vy, yaw)):
            self.fault = True
            self.roll_cmd = self.pitch_cmd = 0.0
            return 0.0, 0.0
        g = self.gains
        ex = g.kp_xy * (sp.xd - x) - vx
        ey = g.kp_xy * (sp.yd - y) - vy
        c, s = math.cos(yaw), math.sin(yaw)
        ebx = c * ex + s * ey
        eby = -s * ex + c * ey
        out_x, self.pid_x = pid_step(self.pid_x, ebx, g.vel_xy, dt)
        out_y, self.pid_y = pid_step(self.pid_y, eby, g.vel_xy, dt)
        pitch = _clamp(out_x, -g.tilt_max, g.tilt_max)
        roll = _clamp(-out_y, -g.tilt_max, g.tilt_max)
        step = g.tilt_rate_limit * dt
        self.pitch_cmd = _clamp(pitch, self.pitch_cmd - step, self.pitch_cmd + step)
        self.roll_cmd = _clamp(roll, self.roll_cmd - step, self.roll_cmd + step)
        return self.roll_cmd, self.pitch_cmd

    def vertical_control(self, sp: Setpoint, z: float, vz_est: float, dt: float) -> float:
        """PWM duty for the collective thrust.

        Thrust is ``mass * (g + PID(vz_des - vz))`` split evenly over the
        rotors and mapped through the inverse thrust curve.
        """
        if not dt > 0:
            raise ValueError("dt must be positive")
        if not (math.isfinite(z) and math.isfinite(vz_est)):
            self.fault = True
            return thrust_to_pwm(self.mass * self.g / N_ROTORS, self.curve)
        vz_des = self.gains.kp_z * (sp.zd - z)
        out, self.pid_z = pid_step(self.pid_z, vz_des - vz_est, self.gains.vel_z, dt)
        thrust = max(self.mass * (self.g + out), 0.0)
        per_rotor = thrust / N_ROTORS
        if per_rotor >= self.curve.max_thrust:
            self.saturation_events += 1
        return thrust_to_pwm(per_rotor, self.curve)


def attitude_moments(roll_cmd: float, pitch_cmd: float, state, gains: AttitudeLoopGains) -> tuple[float, float, float]:
    """PD attitude loop producing (u2, u3, u4); yaw is rate-damped only.

    ``state`` is the 12-vector, read at the angle and rate slots.
    """
    phi, phi_dot, theta, theta_dot, psi_dot = state[6], state[7], state[8], state[9], state[11]
    u2 = gains.kp * (roll_cmd - phi) - gains.kd * phi_dot
    u3 = gains.kp * (pitch_cmd - theta) - gains.kd * theta_dot
    u4 = -gains.kd_yaw * psi_dot
    return u2, u3, u4
