import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from movingbase.actuation import N_ROTORS, load_thrust_curve, pwm_to_thrust, thrust_to_pwm
from movingbase.config import data_path
from movingbase.controller import (
    AttitudeLoopGains,
    CascadeController,
    ControllerGains,
    PIDGains,
    PIDState,
    Setpoint,
    attitude_moments,
    pid_step,
)
from movingbase.dynamics import InertiaParams, rk4_inertial_step

P = InertiaParams()
CURVE = load_thrust_curve(data_path("thrust_curve.txt"))
DT = 0.01


def controller(**gain_kw):
    return CascadeController(ControllerGains(**gain_kw), CURVE, P.mass, P.g)


class ReferencePID:
    """Textbook discrete PID: trapezoid integral with clamp, low-passed backward-difference derivative."""

    def __init__(self, kp, ki, kd, limit, tau):
        self.kp, self.ki, self.kd, self.limit, self.tau = kp, ki, kd, limit, tau
        self.i = 0.0
        self.prev = None
        self.d = 0.0

    def __call__(self, e, dt):
        prev = e if self.prev is None else self.prev
        self.i = float(np.clip(self.i + dt * (e + prev) / 2, -self.limit, self.limit))
        a = dt / (self.tau + dt)
        self.d = (1 - a) * self.d + a * (e - prev) / dt
        self.prev = e
        return self.kp * e + self.ki * self.i + self.kd * self.d


@given(st.floats(-5, 5), st.floats(0.1, 10))
def test_pid_proportional_only(e, kp):
    out, _ = pid_step(PIDState(), e, PIDGains(kp=kp), DT)
    assert out == kp * e


@pytest.mark.parametrize("n", [1, 10, 250])
def test_pid_integrator_arithmetic(n):
    g = PIDGains(kp=0.0, ki=0.8)
    state = PIDState()
    e = 0.3
    for _ in range(n):
        out, state = pid_step(state, e, g, DT)
    assert out == pytest.approx(0.8 * e * n * DT, rel=1e-12)


def test_pid_integrator_clamp():
    g = PIDGains(kp=0.0, ki=1.0, i_limit=0.05)
    state = PIDState()
    for _ in range(1000):
        out, state = pid_step(state, 1.0, g, DT)
    assert out == pytest.approx(0.05)


@pytest.mark.parametrize("tau", [0.0, 0.02, 0.1])
def test_pid_matches_reference_on_sinusoid(tau):
    gains = PIDGains(kp=0.7, ki=0.4, kd=0.05, i_limit=0.3, d_tau=tau)
    ref = ReferencePID(0.7, 0.4, 0.05, 0.3, tau)
    state = PIDState()
    for k in range(2000):
        e = math.sin(2 * math.pi * 0.7 * k * DT) + 0.3 * math.cos(5.0 * k * DT)
        out, state = pid_step(state, e, gains, DT)
        assert out == pytest.approx(ref(e, DT), abs=1e-9)


def test_pid_rejects_dt():
    with pytest.raises(ValueError):
        pid_step(PIDState(), 1.0, PIDGains(1.0), 0.0)


def test_at_setpoint_outputs_hover():
    c = controller()
    sp = Setpoint(0.1, -0.2, 0.35)
    assert c.horizontal_control(sp, (0.1, -0.2), (0.0, 0.0), 0.4, DT) == (0.0, 0.0)
    pwm = c.vertical_control(sp, 0.35, 0.0, DT)
    assert pwm == thrust_to_pwm(P.mass * P.g / N_ROTORS, CURVE)


def test_positive_x_error_pitches_forward():
    c = controller()
    roll, pitch = c.horizontal_control(Setpoint(0.5, 0, 0.35), (0.0, 0.0), (0.0, 0.0), 0.0, DT)
    assert pitch > 0
    assert roll == 0.0


def expected_commands(gains, ex_world, ey_world, yaw):
    """Rotation oracle: body-frame error by an explicit 2-D rotation matrix, then P-only gains."""
    R = np.array([[math.cos(yaw), math.sin(yaw)], [-math.sin(yaw), math.cos(yaw)]])
    ebx, eby = R @ np.array([ex_world, ey_world]) * gains.kp_xy
    kp = gains.vel_xy.kp
    clamp = lambda v: max(-gains.tilt_max, min(gains.tilt_max, v))
    return clamp(-kp * eby), clamp(kp * ebx)


@pytest.mark.parametrize("yaw", [0.0, math.pi / 2, -math.pi / 4, 2.0])
def test_yaw_rotation_oracle(yaw):
    g = ControllerGains(vel_xy=PIDGains(kp=0.25), tilt_rate_limit=1e3)
    c = CascadeController(g, CURVE, P.mass, P.g)
    roll, pitch = c.horizontal_control(Setpoint(0.2, 0.0, 0.35), (0.0, 0.0), (0.0, 0.0), yaw, DT)
    exp_roll, exp_pitch = expected_commands(g, 0.2, 0.0, yaw)
    assert roll == pytest.approx(exp_roll, abs=1e-12)
    assert pitch == pytest.approx(exp_pitch, abs=1e-12)
    if yaw == math.pi / 2:
        assert abs(pitch) < 1e-12 and roll > 0


@given(st.floats(-math.pi, math.pi), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5), st.floats(-0.3, 0.3), st.floats(-0.3, 0.3))
def test_yaw_rotation_consistency(yaw, ex, ey, vx, vy):
    """Running at yaw on world errors equals running at yaw = 0 on pre-rotated errors."""
    g = ControllerGains(tilt_rate_limit=1e3)
    c_world = CascadeController(g, CURVE, P.mass, P.g)
    c_body = CascadeController(g, CURVE, P.mass, P.g)
    rot = np.array([[math.cos(yaw), math.sin(yaw)], [-math.sin(yaw), math.cos(yaw)]])
    pb = rot @ np.array([-ex, -ey])
    vb = rot @ np.array([vx, vy])
    a = c_world.horizontal_control(Setpoint(0, 0, 0.35), (-ex, -ey), (vx, vy), yaw, DT)
    b = c_body.horizontal_control(Setpoint(0, 0, 0.35), tuple(pb), tuple(vb), 0.0, DT)
    np.testing.assert_allclose(a, b, atol=1e-12)


@given(st.lists(st.tuples(st.floats(-3, 3), st.floats(-3, 3), st.floats(-2, 2), st.floats(-2, 2)), min_size=2, max_size=40))
def test_rate_and_saturation_compliance(samples):
    c = controller()
    sp = Setpoint(0.0, 0.0, 0.35)
    prev = (0.0, 0.0)
    step = c.gains.tilt_rate_limit * DT
    for x, y, vx, vy in samples:
        cmd = c.horizontal_control(sp, (x, y), (vx, vy), 0.3, DT)
        assert all(abs(v) <= c.gains.tilt_max + 1e-15 for v in cmd)
        assert all(abs(a - b) <= step + 1e-15 for a, b in zip(cmd, prev))
        prev = cmd
        pwm = c.vertical_control(sp, y, vy, DT)
        assert 0.0 <= pwm <= 1.0


def test_large_altitude_error_saturates_pwm():
    c = controller()
    assert c.vertical_control(Setpoint(0, 0, 50.0), 0.0, 0.0, DT) == 1.0
    assert c.saturation_events == 1


def test_non_finite_estimate_faults_to_hold():
    c = controller()
    assert c.horizontal_control(Setpoint(0, 0, 0.35), (math.nan, 0.0), (0.0, 0.0), 0.0, DT) == (0.0, 0.0)
    assert c.fault
    c2 = controller()
    assert c2.vertical_control(Setpoint(0, 0, 0.35), 0.35, math.inf, DT) == thrust_to_pwm(P.mass * P.g / N_ROTORS, CURVE)
    assert c2.fault


@pytest.mark.parametrize("kwargs", [dict(tilt_rate_limit=0.0), dict(tilt_max=0.0), dict(tilt_max=2.0)])
def test_gain_validation(kwargs):
    with pytest.raises(ValueError):
        ControllerGains(**kwargs)


def test_vertical_step_settles():
    """Closed loop on the rigid-body model: 0 -> 0.35 m settles to +-5 cm in under 5 s."""
    c = controller()
    sp = Setpoint(0.0, 0.0, 0.35)
    x = np.zeros(12)
    z = []
    for k in range(800):
        pwm = c.vertical_control(sp, x[4], x[5], DT)
        u1 = N_ROTORS * pwm_to_thrust(pwm, CURVE) / P.mass
        for _ in range(5):
            x = rk4_inertial_step(x, (u1, 0.0, 0.0, 0.0), P, DT / 5)
        z.append(x[4])
    z = np.array(z)
    t = np.arange(1, 801) * DT
    outside = np.abs(z - 0.35) > 0.05
    settle = t[np.nonzero(outside)[0].max()] if outside.any() else 0.0
    assert settle < 5.0


def test_attitude_moments_pd():
    s = np.zeros(12)
    s[6], s[7], s[8], s[9], s[11] = 0.1, 0.2, -0.1, 0.3, 0.5
    g = AttitudeLoopGains(kp=400, kd=40, kd_yaw=10)
    u2, u3, u4 = attitude_moments(0.0, 0.0, s, g)
    assert (u2, u3, u4) == pytest.approx((-40 - 8, 40 - 12, -5))
