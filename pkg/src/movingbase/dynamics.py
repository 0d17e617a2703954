"""Quadrotor rigid-body equations of motion in inertial and platform frames.

State layout (12-vector), odd slots are positions/angles and even slots their rates::

    [x, vx, y, vy, z, vz, phi, phi_dot, theta, theta_dot, psi, psi_dot]

Euler angles follow the Z-Y-X (yaw-pitch-roll) convention, so the thrust
direction in the reference frame is the third column of
``Rz(psi) @ Ry(theta) @ Rx(phi)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, fields
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

STATE_DIM = 12
# zero-based indices of the velocity-rate slots (x2, x4, x6)
VELOCITY_RATE_ROWS = (1, 3, 5)
ANGLE_SLOTS = (6, 8, 10)
PITCH_WARN_LIMIT = math.radians(80.0)


class NonFiniteStateError(ValueError):
    """Raised when a state, input or platform acceleration contains NaN/inf."""


class IntegrationDivergedError(RuntimeError):
    """Raised when an integration step produced a non-finite state."""

    def __init__(self, message: str, state: np.ndarray, dt: float, step: int | None = None):
        super().__init__(message)
        self.state = state
        self.dt = dt
        self.step = step


def wrap_angle(angle: float) -> float:
    """Map an angle to (-pi, pi]."""
    wrapped = math.remainder(angle, 2.0 * math.pi)
    if wrapped == -math.pi:
        return math.pi
    return wrapped


@dataclass(frozen=True)
class InertiaParams:
    mass: float = 0.033
    Ix: float = 2.3951e-5
    Iy: float = 2.3951e-5
    Iz: float = 3.2347e-5
    g: float = 9.81
    arm_length: float = 0.046
    thrust_coeff: float = 2.25e-8
    yaw_coeff: float = 7.24e-10

    def __post_init__(self):
        for name in ("mass", "Ix", "Iy", "Iz", "g"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be finite and positive, got {value!r}")

    @cached_property
    def coupling(self) -> tuple[float, float, float]:
        return (
            (self.Iy - self.Iz) / self.Ix,
            (self.Iz - self.Ix) / self.Iy,
            (self.Ix - self.Iy) / self.Iz,
        )


@dataclass(frozen=True)
class PlatformAcceleration:
    ax: float = 0.0
    ay: float = 0.0
    az: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.ax, self.ay, self.az)):
            raise NonFiniteStateError("platform acceleration must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.ax, self.ay, self.az])


@dataclass(frozen=True)
class FullState:
    x_r: float = 0.0
    vx_r: float = 0.0
    y_r: float = 0.0
    vy_r: float = 0.0
    z_r: float = 0.0
    vz_r: float = 0.0
    phi: float = 0.0
    phi_dot: float = 0.0
    theta: float = 0.0
    theta_dot: float = 0.0
    psi: float = 0.0
    psi_dot: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(getattr(self, f.name)) for f in fields(self)):
            raise NonFiniteStateError("all twelve state entries must be finite")
        for name in ("phi", "theta", "psi"):
            object.__setattr__(self, name, wrap_angle(getattr(self, name)))

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "FullState":
        values = [float(v) for v in values]
        if len(values) != STATE_DIM:
            raise ValueError(f"expected {STATE_DIM} entries, got {len(values)}")
        return cls(*values)

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, f.name) for f in fields(self)])


def coupling_matrix(params: InertiaParams) -> np.ndarray:
    """Diagonal gyroscopic coupling matrix built from the principal moments."""
    return np.diag(params.coupling)


def thrust_direction(phi: float, theta: float, psi: float) -> tuple[float, float, float]:
    """Third column of the Z-Y-X rotation matrix."""
    cphi, sphi = math.cos(phi), math.sin(phi)
    cth, sth = math.cos(theta), math.sin(theta)
    cpsi, spsi = math.cos(psi), math.sin(psi)
    return (
        cphi * sth * cpsi + sphi * spsi,
        cphi * sth * spsi - sphi * cpsi,
        cphi * cth,
    )


def _as_input(u) -> tuple[float, float, float, float]:
    if type(u) is tuple:
        return u
    if hasattr(u, "as_tuple"):
        return u.as_tuple()
    u1, u2, u3, u4 = (float(v) for v in u)
    return u1, u2, u3, u4


def inertial_derivative(state, u, params: InertiaParams) -> np.ndarray:
    """Time derivative of the 12-state in an inertial frame.

    ``u`` is a ``ControlInput`` or any 4-sequence ``(u1, u2, u3, u4)`` with
    ``u1`` the mass-normalized collective thrust and ``u2..u4`` the body
    angular accelerations.
    """
    if isinstance(state, np.ndarray):
        s = state.tolist()
    elif isinstance(state, FullState):
        s = state.as_array().tolist()
    else:
        s = [float(v) for v in state]
    u1, u2, u3, u4 = _as_input(u)
    # a single NaN or inf poisons the sum
    if not math.isfinite(sum(s) + u1 + u2 + u3 + u4):
        raise NonFiniteStateError("non-finite state or control input")
    if u1 < 0.0:
        raise ValueError(f"collective thrust u1 must be non-negative, got {u1}")

    _, vx, _, vy, _, vz, phi, phi_dot, theta, theta_dot, psi, psi_dot = s
    if abs(theta) > PITCH_WARN_LIMIT:
        warnings.warn(f"pitch {theta:.3f} rad is near the Euler singularity", RuntimeWarning, stacklevel=2)
    cphi, sphi = math.cos(phi), math.sin(phi)
    cth, sth = math.cos(theta), math.sin(theta)
    cpsi, spsi = math.cos(psi), math.sin(psi)
    a, b, c = params.coupling
    return np.array([
        vx,
        u1 * (cphi * sth * cpsi + sphi * spsi),
        vy,
        u1 * (cphi * sth * spsi - sphi * cpsi),
        vz,
        u1 * cphi * cth - params.g,
        phi_dot,
        a * theta_dot * psi_dot + u2,
        theta_dot,
        b * phi_dot * psi_dot + u3,
        psi_dot,
        c * phi_dot * theta_dot + u4,
    ])


def relative_acceleration(abs_accel, platform: PlatformAcceleration) -> np.ndarray:
    """Acceleration relative to a translating platform: ``abs_accel - a_platform``."""
    abs_accel = np.asarray(abs_accel, dtype=float)
    if abs_accel.shape != (3,) or not np.all(np.isfinite(abs_accel)):
        raise NonFiniteStateError("absolute acceleration must be a finite 3-vector")
    return abs_accel - platform.as_array()


def disturbance_matrix() -> np.ndarray:
    """12x3 selection matrix with -1 at the velocity-rate rows."""
    E = np.zeros((STATE_DIM, 3))
    for col, row in enumerate(VELOCITY_RATE_ROWS):
        E[row, col] = -1.0
    return E


def noninertial_derivative(state, u, platform: PlatformAcceleration, params: InertiaParams) -> np.ndarray:
    """Derivative of the platform-relative state for a translating platform."""
    xdot = inertial_derivative(state, u, params)
    xdot[1] -= platform.ax
    xdot[3] -= platform.ay
    xdot[5] -= platform.az
    return xdot


def integrate_step(
    state,
    derivative_fn: Callable[[np.ndarray], np.ndarray],
    dt: float,
    step: int | None = None,
) -> np.ndarray:
    """Advance ``state`` by one fixed RK4 step of length ``dt``.

    ``derivative_fn`` maps a state vector to its derivative; inputs are held
    constant over the step.
    """
    if not 0.0 < dt <= 0.05:
        raise ValueError(f"dt must lie in (0, 0.05], got {dt}")
    x = state.as_array() if isinstance(state, FullState) else np.asarray(state, dtype=float)
    try:
        k1 = derivative_fn(x)
        k2 = derivative_fn(x + 0.5 * dt * k1)
        k3 = derivative_fn(x + 0.5 * dt * k2)
        k4 = derivative_fn(x + dt * k3)
    except NonFiniteStateError as exc:
        raise IntegrationDivergedError(
            f"non-finite stage evaluation (step={step}, dt={dt})", x, dt, step
        ) from exc
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise IntegrationDivergedError(
            f"integration produced a non-finite state (step={step}, dt={dt})", out, dt, step
        )
    return out


def rk4_inertial_step(state, u, params: InertiaParams, dt: float, step: int | None = None) -> np.ndarray:
    """``integrate_step`` specialised to ``inertial_derivative`` with scalar arithmetic.

    Same result as ``integrate_step(state, lambda s: inertial_derivative(s, u, params), dt)``
    up to rounding, several times faster for a single 12-vector.
    """
    if not 0.0 < dt <= 0.05:
        raise ValueError(f"dt must lie in (0, 0.05], got {dt}")
    x = state.as_array().tolist() if isinstance(state, FullState) else [float(v) for v in state]
    u1, u2, u3, u4 = _as_input(u)
    if not math.isfinite(sum(x) + u1 + u2 + u3 + u4):
        raise IntegrationDivergedError(f"non-finite state or input (step={step}, dt={dt})", np.array(x), dt, step)
    if u1 < 0.0:
        raise ValueError(f"collective thrust u1 must be non-negative, got {u1}")
    a, b, c = params.coupling
    g = params.g
    cos, sin = math.cos, math.sin

    def f(s):
        phi, phi_d, th, th_d, psi, psi_d = s[6:]
        cphi, sphi, cth, sth, cpsi, spsi = cos(phi), sin(phi), cos(th), sin(th), cos(psi), sin(psi)
        return (
            s[1], u1 * (cphi * sth * cpsi + sphi * spsi),
            s[3], u1 * (cphi * sth * spsi - sphi * cpsi),
            s[5], u1 * cphi * cth - g,
            phi_d, a * th_d * psi_d + u2,
            th_d, b * phi_d * psi_d + u3,
            psi_d, c * phi_d * th_d + u4,
        )

    h = 0.5 * dt
    k1 = f(x)
    k2 = f([xi + h * ki for xi, ki in zip(x, k1)])
    k3 = f([xi + h * ki for xi, ki in zip(x, k2)])
    k4 = f([xi + dt * ki for xi, ki in zip(x, k3)])
    w = dt / 6.0
    out = np.array([xi + w * (p + 2.0 * q + 2.0 * r + s) for xi, p, q, r, s in zip(x, k1, k2, k3, k4)])
    if not math.isfinite(out.sum()):
        raise IntegrationDivergedError(
            f"integration produced a non-finite state (step={step}, dt={dt})", out, dt, step
        )
    if abs(out[8]) > PITCH_WARN_LIMIT:
        warnings.warn(f"pitch {out[8]:.3f} rad is near the Euler singularity", RuntimeWarning, stacklevel=2)
    return out
