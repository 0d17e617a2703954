"""Position-only translational filters and the attitude filter.

Two translational recursions share one implementation:

* the EKF with unknown inputs (EKF-UI), state
  ``(px, vx, py, vy, pz, vz, d1, d2, d3)`` where ``d`` is the platform
  acceleration entering the velocity rows with a negative sign;
* the baseline EKF over the first six of those states.

Attitude ``(phi, phi_dot, theta, theta_dot, psi, psi_dot)`` is tracked by a
separate EKF fed with measured Euler angles.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields
from functools import cached_property

import numpy as np
from scipy.linalg import block_diag

from .dynamics import thrust_direction, wrap_angle

log = logging.getLogger(__name__)

CORE_DIM = 6
UI_DIM = 9
POS_IDX = (0, 2, 4)
VEL_IDX = (1, 3, 5)
# positions (and attitude angles) sit at every other slot from 0
POS_SLICE = slice(0, 6, 2)
SYMMETRY_TOL = 1e-9
MAX_INNOVATION_COND = 1e12


class FilterDivergedError(RuntimeError):
    """A filter produced a non-finite state or covariance."""


class SingularInnovationError(np.linalg.LinAlgError):
    """The innovation covariance cannot be inverted reliably."""


@dataclass(frozen=True)
class ExtendedState:
    px: float = 0.0
    vx: float = 0.0
    py: float = 0.0
    vy: float = 0.0
    pz: float = 0.0
    vz: float = 0.0
    d1: float = 0.0
    d2: float = 0.0
    d3: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(getattr(self, f.name)) for f in fields(self)):
            raise ValueError("extended state entries must be finite")

    @classmethod
    def from_array(cls, values) -> "ExtendedState":
        return cls(*(float(v) for v in values))

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, f.name) for f in fields(self)])


def _check_psd(name: str, M: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    M = np.array(M, dtype=float)
    if M.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} must be finite")
    scale = max(1.0, float(np.max(np.abs(M))))
    if np.max(np.abs(M - M.T)) > 1e-12 * scale:
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(M).min() < -1e-12 * scale:
        raise ValueError(f"{name} must be positive semidefinite")
    return M


def _per_axis(value) -> np.ndarray:
    arr = np.broadcast_to(np.asarray(value, dtype=float), (3,))
    return arr.copy()


@dataclass(frozen=True)
class FilterConfig:
    q_core: np.ndarray
    q_d: np.ndarray
    r: np.ndarray
    p0: np.ndarray
    ts: float = 0.01
    epsilon_fd: float = 1e-6
    g: float = 9.81
    joseph: bool = False
    attitude_source: str = "estimate"

    def __post_init__(self):
        object.__setattr__(self, "q_core", _check_psd("q_core", self.q_core, (CORE_DIM, CORE_DIM)))
        object.__setattr__(self, "q_d", _check_psd("q_d", self.q_d, (3, 3)))
        object.__setattr__(self, "r", _check_psd("r", self.r, (3, 3)))
        object.__setattr__(self, "p0", _check_psd("p0", self.p0, (UI_DIM, UI_DIM)))
        if not self.ts > 0:
            raise ValueError("ts must be positive")
        if not self.epsilon_fd > 0:
            raise ValueError("epsilon_fd must be positive")
        if self.attitude_source not in ("estimate", "truth"):
            raise ValueError(f"attitude_source must be 'estimate' or 'truth', got {self.attitude_source!r}")

    @classmethod
    def diagonal(
        cls,
        q_pos,
        q_vel,
        q_d,
        r_pos,
        p0_pos,
        p0_vel,
        p0_d,
        **kwargs,
    ) -> "FilterConfig":
        """Build a config from variances given per axis (a 3-sequence) or shared (a scalar)."""
        q_pos, q_vel, q_d, r_pos, p0_pos, p0_vel, p0_d = (
            _per_axis(v) for v in (q_pos, q_vel, q_d, r_pos, p0_pos, p0_vel, p0_d)
        )
        return cls(
            q_core=np.diag(np.column_stack([q_pos, q_vel]).ravel()),
            q_d=np.diag(q_d),
            r=np.diag(r_pos),
            p0=np.diag(np.concatenate([np.column_stack([p0_pos, p0_vel]).ravel(), p0_d])),
            **kwargs,
        )

    @cached_property
    def q_aug(self) -> np.ndarray:
        return block_diag(self.q_core, self.q_d)


@dataclass(frozen=True)
class Innovation:
    time: float
    residual: np.ndarray
    covariance: np.ndarray

    @property
    def nis(self) -> float:
        return float(self.residual @ np.linalg.solve(self.covariance, self.residual))


@dataclass(frozen=True)
class FilterState:
    estimate: np.ndarray
    covariance: np.ndarray
    last_update_time: float = 0.0
    innovation: Innovation | None = None

    @property
    def dim(self) -> int:
        return self.estimate.shape[0]

    @property
    def position(self) -> np.ndarray:
        return self.estimate[list(POS_IDX)]

    @property
    def velocity(self) -> np.ndarray:
        return self.estimate[list(VEL_IDX)]

    @property
    def unknown_input(self) -> np.ndarray | None:
        return self.estimate[6:9] if self.dim == UI_DIM else None

    def as_extended(self) -> ExtendedState:
        return ExtendedState.from_array(self.estimate)


def init_filter(y0, cfg: FilterConfig, unknown_inputs: bool = True, t0: float = 0.0) -> FilterState:
    """Start from a position fix with zero velocity and zero unknown input."""
    n = UI_DIM if unknown_inputs else CORE_DIM
    z = np.zeros(n)
    z[list(POS_IDX)] = np.asarray(y0, dtype=float)
    return FilterState(z, cfg.p0[:n, :n].copy(), t0)


def thrust_acceleration(u1: float, angles, g: float) -> np.ndarray:
    """Acceleration from collective thrust ``u1`` at Euler ``angles`` plus gravity."""
    phi, theta, psi = angles
    cx, cy, cz = thrust_direction(phi, theta, psi)
    return np.array([u1 * cx, u1 * cy, u1 * cz - g])


def translational_transition(z: np.ndarray, acc: np.ndarray, ts: float) -> np.ndarray:
    """One discrete step of the translational model.

    Positions and velocities are advanced exactly for an acceleration held over
    the step (identical to an RK4 step of the kinematics). For 9-state inputs
    the unknown inputs are held constant and ``ts * E @ d`` is added, with E
    placing ``-d`` on the velocity rows. ``z`` may carry extra trailing
    columns (one state per column).
    """
    acc = np.asarray(acc, dtype=float)
    if z.ndim == 2:
        acc = acc[:, None]
    out = z.copy()
    out[0:6:2] += ts * z[1:6:2] + (0.5 * ts * ts) * acc
    out[1:6:2] += ts * acc
    if z.shape[0] == UI_DIM:
        out[1:6:2] -= ts * z[6:9]
    return out


def fd_jacobian(f, z_hat, epsilon: float, batched: bool = False) -> np.ndarray:
    """Forward-difference Jacobian, column ``i`` is ``(f(z + eps e_i) - f(z)) / eps``.

    With ``batched=True`` ``f`` must accept an ``(n, k)`` array of column states.
    """
    return fd_jacobian_value(f, z_hat, epsilon, batched)[1]


def fd_jacobian_value(f, z_hat, epsilon: float, batched: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """``(f(z), J)`` with the nominal value reused from the differencing pass."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    z = z_hat.as_array() if hasattr(z_hat, "as_array") else np.asarray(z_hat, dtype=float)
    n = z.shape[0]
    if batched:
        cols = np.empty((n, n + 1))
        cols[:, 0] = z
        cols[:, 1:] = z[:, None] + epsilon * np.eye(n)
        values = np.asarray(f(cols), dtype=float)
        f0 = values[:, 0]
        F = (values[:, 1:] - f0[:, None]) / epsilon
    else:
        f0 = np.asarray(f(z), dtype=float)
        F = np.empty((f0.shape[0], n))
        for i in range(n):
            zi = z.copy()
            zi[i] += epsilon
            F[:, i] = (np.asarray(f(zi)) - f0) / epsilon
    if not _finite(f0, F):
        raise FilterDivergedError("non-finite model evaluation while differencing")
    return f0.copy(), F


def _well_conditioned(S: np.ndarray) -> bool:
    """Cheap sufficient test (trace^3 / det bounds the condition number of an
    SPD 3x3), falling back to the exact condition number."""
    if not _finite(S):
        return False
    (a, b, c), (d, e, f), (g, h, i) = S.tolist()
    det = a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g)
    if det > 0 and S.trace() ** 3 / det <= MAX_INNOVATION_COND:
        return True
    return np.linalg.cond(S) <= MAX_INNOVATION_COND


def _symmetrize(P: np.ndarray, where: str) -> np.ndarray:
    D = P - P.T
    asym = np.abs(D).max()
    if asym > SYMMETRY_TOL:
        log.info("%s: covariance asymmetry %.3e re-symmetrized", where, asym)
    return P - 0.5 * D


def _finite(*arrays: np.ndarray) -> bool:
    # a NaN or inf anywhere poisons the sum
    return all(math.isfinite(a.sum()) for a in arrays)


def _angles_of(attitude) -> tuple[float, float, float]:
    if hasattr(attitude, "angles"):
        return attitude.angles
    phi, theta, psi = attitude
    return float(phi), float(theta), float(psi)


def _u1_of(u) -> float:
    if hasattr(u, "u1"):
        return u.u1
    if np.ndim(u) == 0:
        return float(u)
    return float(u[0])


def _predict(fs: FilterState, acc: np.ndarray, cfg: FilterConfig, Q: np.ndarray) -> FilterState:
    ts = cfg.ts

    def f(z):
        return translational_transition(z, acc, ts)

    z, F = fd_jacobian_value(f, fs.estimate, cfg.epsilon_fd, batched=True)
    P = _symmetrize(F @ fs.covariance @ F.T + Q, "predict")
    if not _finite(z, P):
        raise FilterDivergedError(f"prediction diverged at t={fs.last_update_time + ts:.3f}")
    return FilterState(z, P, fs.last_update_time + ts)


def _update(fs: FilterState, y, cfg: FilterConfig) -> FilterState:
    idx = POS_SLICE
    y = np.asarray(y, dtype=float)
    z, P = fs.estimate, fs.covariance
    residual = y - z[idx]
    S = P[idx, idx] + cfg.r
    if not _well_conditioned(S):
        raise SingularInnovationError(f"innovation covariance is singular at t={fs.last_update_time:.3f}")
    PHt = P[:, idx]
    K = np.linalg.solve(S, PHt.T).T
    z_new = z + K @ residual
    if cfg.joseph:
        IKH = np.eye(fs.dim)
        IKH[:, idx] -= K
        P_new = IKH @ P @ IKH.T + K @ cfg.r @ K.T
    else:
        P_new = P - K @ PHt.T
    P_new = _symmetrize(P_new, "update")
    if not _finite(z_new, P_new):
        raise FilterDivergedError(f"update diverged at t={fs.last_update_time:.3f}")
    return FilterState(z_new, P_new, fs.last_update_time, Innovation(fs.last_update_time, residual, S))


def ekfui_predict(fs: FilterState, u, attitude, cfg: FilterConfig) -> FilterState:
    """Propagate the 9-state EKF-UI one filter step."""
    acc = thrust_acceleration(_u1_of(u), _angles_of(attitude), cfg.g)
    return _predict(fs, acc, cfg, cfg.q_aug)


def ekfui_update(fs: FilterState, y, cfg: FilterConfig) -> tuple[FilterState, Innovation]:
    """Correct with a relative position fix; returns the new state and its innovation."""
    out = _update(fs, y, cfg)
    return out, out.innovation


def ekfui_step(fs: FilterState, u, attitude, y_opt, cfg: FilterConfig) -> FilterState:
    """Predict, then update when a measurement is available.

    The returned state's ``innovation`` is ``None`` for predict-only steps.
    """
    fs = ekfui_predict(fs, u, attitude, cfg)
    if y_opt is None:
        return fs
    return _update(fs, y_opt, cfg)


def ekf_baseline_step(fs6: FilterState, u, attitude, y_opt, cfg: FilterConfig) -> FilterState:
    """Standard EKF over (px, vx, py, vy, pz, vz), blind to platform motion."""
    if fs6.dim != CORE_DIM:
        raise ValueError(f"baseline EKF expects a {CORE_DIM}-state filter, got {fs6.dim}")
    acc = thrust_acceleration(_u1_of(u), _angles_of(attitude), cfg.g)
    fs6 = _predict(fs6, acc, cfg, cfg.q_core)
    if y_opt is None:
        return fs6
    return _update(fs6, y_opt, cfg)


# --- attitude -----------------------------------------------------------------

ANGLE_IDX = (0, 2, 4)


@dataclass(frozen=True)
class AttitudeFilterConfig:
    q: np.ndarray
    r: np.ndarray
    p0: np.ndarray
    coupling: tuple[float, float, float] = (0.0, 0.0, 0.0)
    ts: float = 0.01
    epsilon_fd: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "q", _check_psd("q", self.q, (6, 6)))
        object.__setattr__(self, "r", _check_psd("r", self.r, (3, 3)))
        object.__setattr__(self, "p0", _check_psd("p0", self.p0, (6, 6)))
        if not self.ts > 0:
            raise ValueError("ts must be positive")

    @classmethod
    def diagonal(cls, q_angle: float, q_rate: float, r_angle: float, p0_angle: float, p0_rate: float, **kwargs):
        return cls(
            q=np.diag([q_angle, q_rate] * 3),
            r=r_angle * np.eye(3),
            p0=np.diag([p0_angle, p0_rate] * 3),
            **kwargs,
        )


@dataclass(frozen=True)
class AttitudeState:
    """Attitude estimate ordered ``(phi, phi_dot, theta, theta_dot, psi, psi_dot)``."""

    x: np.ndarray
    covariance: np.ndarray
    innovation: Innovation | None = field(default=None, compare=False)

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        for i in ANGLE_IDX:
            x[i] = wrap_angle(x[i])
        object.__setattr__(self, "x", x)

    @classmethod
    def from_angles(cls, angles, cfg: AttitudeFilterConfig) -> "AttitudeState":
        x = np.zeros(6)
        x[list(ANGLE_IDX)] = angles
        return cls(x, cfg.p0.copy())

    @property
    def phi(self) -> float:
        return float(self.x[0])

    @property
    def theta(self) -> float:
        return float(self.x[2])

    @property
    def psi(self) -> float:
        return float(self.x[4])

    @property
    def phi_dot(self) -> float:
        return float(self.x[1])

    @property
    def theta_dot(self) -> float:
        return float(self.x[3])

    @property
    def psi_dot(self) -> float:
        return float(self.x[5])

    @property
    def angles(self) -> tuple[float, float, float]:
        return (float(self.x[0]), float(self.x[2]), float(self.x[4]))


def attitude_derivative(x: np.ndarray, moments, coupling) -> np.ndarray:
    """Rotational rows of the state derivative; ``x`` may hold one state per column."""
    a, b, c = coupling
    u2, u3, u4 = moments
    dx = np.empty_like(x)
    dx[0] = x[1]
    dx[1] = a * x[3] * x[5] + u2
    dx[2] = x[3]
    dx[3] = b * x[1] * x[5] + u3
    dx[4] = x[5]
    dx[5] = c * x[1] * x[3] + u4
    return dx


def attitude_transition(x: np.ndarray, moments, cfg: AttitudeFilterConfig) -> np.ndarray:
    """RK4 step of the rotational dynamics with moments held over ``cfg.ts``."""
    h = cfg.ts
    k1 = attitude_derivative(x, moments, cfg.coupling)
    k2 = attitude_derivative(x + 0.5 * h * k1, moments, cfg.coupling)
    k3 = attitude_derivative(x + 0.5 * h * k2, moments, cfg.coupling)
    k4 = attitude_derivative(x + h * k3, moments, cfg.coupling)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _moments_of(u) -> tuple[float, float, float]:
    if hasattr(u, "as_tuple"):
        return u.as_tuple()[1:]
    u = [float(v) for v in u]
    return tuple(u[-3:])


def attitude_ekf_step(att: AttitudeState, u, y_angles, cfg: AttitudeFilterConfig) -> AttitudeState:
    """Predict with the applied moments, then correct with measured Euler angles.

    ``u`` is a ``ControlInput``, a 4-sequence, or the moment triple
    ``(u2, u3, u4)``. ``y_angles`` may be ``None`` for a predict-only step.
    """
    moments = _moments_of(u)

    def f(x):
        return attitude_transition(x, moments, cfg)

    x, F = fd_jacobian_value(f, att.x, cfg.epsilon_fd, batched=True)
    for i in ANGLE_IDX:
        x[i] = wrap_angle(x[i])
    P = _symmetrize(F @ att.covariance @ F.T + cfg.q, "attitude predict")
    if not _finite(x, P):
        raise FilterDivergedError("attitude prediction diverged")
    if y_angles is None:
        return AttitudeState(x, P)

    idx = POS_SLICE
    residual = np.array([wrap_angle(float(y) - x[i]) for y, i in zip(y_angles, ANGLE_IDX)])
    S = P[idx, idx] + cfg.r
    if not _well_conditioned(S):
        raise SingularInnovationError("attitude innovation covariance is singular")
    PHt = P[:, idx]
    K = np.linalg.solve(S, PHt.T).T
    x = x + K @ residual
    P = _symmetrize(P - K @ PHt.T, "attitude update")
    return AttitudeState(x, P, Innovation(0.0, residual, S))

