"""Rotor mixing and the empirical PWM/thrust relation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import PchipInterpolator

from .dynamics import InertiaParams

N_ROTORS = 4


class SaturationError(ValueError):
    """A requested control input needs a negative squared rotor speed."""

    def __init__(self, rotors: list[int], omega_sq: np.ndarray):
        names = ", ".join(f"rotor {i + 1}" for i in rotors)
        super().__init__(f"infeasible demand on {names}: omega^2 = {omega_sq[rotors].tolist()}")
        self.rotors = rotors
        self.omega_sq = omega_sq


class ThrustCurveError(ValueError):
    """Empty or malformed thrust curve."""


@dataclass(frozen=True)
class ControlInput:
    u1: float
    u2: float = 0.0
    u3: float = 0.0
    u4: float = 0.0

    def __post_init__(self):
        if self.u1 < 0.0:
            raise ValueError(f"u1 must be non-negative, got {self.u1}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.u1, self.u2, self.u3, self.u4)

    def as_array(self) -> np.ndarray:
        return np.array(self.as_tuple())


@dataclass(frozen=True)
class RotorSpeeds:
    omega1: float
    omega2: float
    omega3: float
    omega4: float

    def __post_init__(self):
        if min(self.as_tuple()) < 0.0:
            raise ValueError("rotor speeds must be non-negative")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.omega1, self.omega2, self.omega3, self.omega4)

    def squared(self) -> np.ndarray:
        return np.square(np.array(self.as_tuple()))


def mixing_matrix(params: InertiaParams) -> np.ndarray:
    """4x4 map from squared rotor speeds to (u1, u2, u3, u4)."""
    b, l, m = params.thrust_coeff, params.yaw_coeff, params.mass
    Ix, Iy, Iz = params.Ix, params.Iy, params.Iz
    return np.array([
        [b / m, b / m, b / m, b / m],
        [0.0, -b / Ix, 0.0, b / Ix],
        [-b / Iy, 0.0, b / Iy, 0.0],
        [-l / Iz, l / Iz, -l / Iz, l / Iz],
    ])


def mix_forward(omegas: RotorSpeeds, params: InertiaParams) -> ControlInput:
    u = mixing_matrix(params) @ omegas.squared()
    # rounding can leave a tiny negative thrust at zero speed
    return ControlInput(max(u[0], 0.0), u[1], u[2], u[3])


def squared_speeds_for(u, params: InertiaParams) -> np.ndarray:
    """Unconstrained solution of the mixing equations for Omega^2."""
    u_vec = u.as_array() if isinstance(u, ControlInput) else np.asarray(u, dtype=float)
    return np.linalg.solve(mixing_matrix(params), u_vec)


def mix_inverse(u: ControlInput, params: InertiaParams) -> RotorSpeeds:
    omega_sq = squared_speeds_for(u, params)
    # tolerate rounding noise around zero speed
    tol = 1e-12 * max(1.0, float(np.max(np.abs(omega_sq))))
    bad = [i for i, w in enumerate(omega_sq) if w < -tol]
    if bad:
        raise SaturationError(bad, omega_sq)
    return RotorSpeeds(*np.sqrt(np.clip(omega_sq, 0.0, None)))


class Mixer:
    """Clamping mixer used inside the simulator.

    Infeasible demands are clamped to zero rotor speed instead of raising, and
    each clamped step is counted so runs can report saturation occurrences.
    """

    def __init__(self, params: InertiaParams):
        self.B = mixing_matrix(params)
        self.B_inv = np.linalg.inv(self.B)
        self.saturation_events = 0

    def apply(self, u: tuple[float, float, float, float]) -> tuple[float, float, float, float]:
        omega_sq = self.B_inv @ np.array(u)
        if omega_sq.min() < 0.0:
            self.saturation_events += 1
            np.clip(omega_sq, 0.0, None, out=omega_sq)
            u1, u2, u3, u4 = (self.B @ omega_sq).tolist()
            return max(u1, 0.0), u2, u3, u4
        return u


@dataclass(frozen=True)
class ThrustCurve:
    """Per-rotor thrust (N) as a function of PWM duty in [0, 1]."""

    pwm: tuple[float, ...]
    thrust: tuple[float, ...]
    mode: str = "pchip"
    _forward: object = field(init=False, repr=False, compare=False)
    _inverse: object = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        pwm = np.asarray(self.pwm, dtype=float)
        thrust = np.asarray(self.thrust, dtype=float)
        if pwm.ndim != 1 or pwm.size < 2 or pwm.shape != thrust.shape:
            raise ThrustCurveError("thrust curve needs at least two (pwm, thrust) samples")
        if not (np.all(np.isfinite(pwm)) and np.all(np.isfinite(thrust))):
            raise ThrustCurveError("thrust curve contains non-finite samples")
        if pwm[0] != 0.0 or thrust[0] != 0.0:
            raise ThrustCurveError("thrust curve must start at (0, 0)")
        if np.any(np.diff(pwm) <= 0) or pwm[-1] > 1.0:
            raise ThrustCurveError("pwm samples must be strictly increasing within [0, 1]")
        if np.any(np.diff(thrust) < 0):
            raise ThrustCurveError("thrust samples must be non-decreasing")
        if self.mode not in ("pchip", "linear"):
            raise ThrustCurveError(f"unknown interpolation mode {self.mode!r}")
        object.__setattr__(self, "pwm", tuple(pwm.tolist()))
        object.__setattr__(self, "thrust", tuple(thrust.tolist()))

        # the inverse needs strictly increasing thrust, keep the first of any flat run
        keep = np.concatenate([[True], np.diff(thrust) > 0])
        t_inv, p_inv = thrust[keep], pwm[keep]
        if self.mode == "pchip":
            object.__setattr__(self, "_forward", PchipInterpolator(pwm, thrust, extrapolate=False))
            object.__setattr__(self, "_inverse", PchipInterpolator(t_inv, p_inv, extrapolate=False))
        else:
            object.__setattr__(self, "_forward", lambda d: np.interp(d, pwm, thrust))
            object.__setattr__(self, "_inverse", lambda t: np.interp(t, t_inv, p_inv))

    @property
    def max_thrust(self) -> float:
        return self.thrust[-1]

    @property
    def max_pwm(self) -> float:
        return self.pwm[-1]


def pwm_to_thrust(duty: float, curve: ThrustCurve) -> float:
    if not 0.0 <= duty <= 1.0:
        raise ValueError(f"duty must lie in [0, 1], got {duty}")
    if duty >= curve.max_pwm:
        return curve.max_thrust
    return float(curve._forward(duty))


def thrust_to_pwm(thrust: float, curve: ThrustCurve) -> float:
    """Duty cycle producing ``thrust``; demands above the curve clamp to 1.0."""
    if not math.isfinite(thrust) or thrust < 0.0:
        raise ValueError(f"thrust must be finite and non-negative, got {thrust}")
    if thrust >= curve.max_thrust:
        return 1.0
    return float(np.clip(curve._inverse(thrust), 0.0, 1.0))


def load_thrust_curve(path: str | Path, mode: str = "pchip") -> ThrustCurve:
    """Read a two-column ``pwm_duty thrust_newtons`` file.

    The first non-comment line is a header; ``#`` starts a comment; columns may
    be separated by whitespace or commas.
    """
    rows = []
    header_seen = False
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if not header_seen:
            header_seen = True
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 2:
            raise ThrustCurveError(f"expected two columns, got {raw!r}")
        try:
            rows.append((float(parts[0]), float(parts[1])))
        except ValueError as exc:
            raise ThrustCurveError(f"non-numeric row {raw!r}") from exc
    if not rows:
        raise ThrustCurveError(f"{path}: no samples")
    pwm, thrust = zip(*rows)
    return ThrustCurve(pwm, thrust, mode)
