"""Independent reference implementations used as test oracles.

Nothing here imports filter code from the package; each oracle is written
straight from the textbook recursion.
"""

import math

import numpy as np


def central_jacobian(f, x, eps=1e-5):
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        e = np.zeros(x.size)
        e[i] = eps
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * eps))
    return np.column_stack(cols)


class LinearAugmentedKF:
    """Kalman filter on (px, vx, py, vy, pz, vz, d1, d2, d3) with a known
    constant thrust acceleration and d entering the velocity rows with a minus sign."""

    def __init__(self, x0, P0, Q, R, ts, acc):
        self.x = np.array(x0, dtype=float)
        self.P = np.array(P0, dtype=float)
        self.Q, self.R, self.ts = Q, R, ts
        n = self.x.size
        A = np.eye(n)
        B = np.zeros(n)
        for k in range(3):
            p, v = 2 * k, 2 * k + 1
            A[p, v] = ts
            B[p] = 0.5 * ts * ts * acc[k]
            B[v] = ts * acc[k]
            if n == 9:
                A[v, 6 + k] = -ts
        self.A, self.B = A, B
        self.H = np.zeros((3, n))
        self.H[0, 0] = self.H[1, 2] = self.H[2, 4] = 1.0

    def step(self, y=None):
        self.x = self.A @ self.x + self.B
        self.P = self.A @ self.P @ self.A.T + self.Q
        if y is not None:
            S = self.H @ self.P @ self.H.T + self.R
            K = self.P @ self.H.T @ np.linalg.inv(S)
            self.x = self.x + K @ (np.asarray(y) - self.H @ self.x)
            self.P = (np.eye(self.x.size) - K @ self.H) @ self.P
            self.P = 0.5 * (self.P + self.P.T)
        return self.x


def scalar_cv_cycle(p, v, Ppp, Ppv, Pvv, y, ts, qp, qv, r, a=0.0):
    """One predict/update of a 1-D constant-velocity filter in scalar arithmetic."""
    p_pred = p + ts * v + 0.5 * ts * ts * a
    v_pred = v + ts * a
    Ppp_pred = Ppp + 2 * ts * Ppv + ts * ts * Pvv + qp
    Ppv_pred = Ppv + ts * Pvv
    Pvv_pred = Pvv + qv
    s = Ppp_pred + r
    kp, kv = Ppp_pred / s, Ppv_pred / s
    innov = y - p_pred
    return (
        p_pred + kp * innov,
        v_pred + kv * innov,
        (1 - kp) * Ppp_pred,
        (1 - kp) * Ppv_pred,
        Pvv_pred - kv * Ppv_pred,
    )


def wrap(a):
    return (a + math.pi) % (2 * math.pi) - math.pi


def attitude_rhs(x, m, coupling):
    a, b, c = coupling
    return np.array([
        x[1], a * x[3] * x[5] + m[0],
        x[3], b * x[1] * x[5] + m[1],
        x[5], c * x[1] * x[3] + m[2],
    ])


def attitude_rk4(x, m, coupling, h):
    k1 = attitude_rhs(x, m, coupling)
    k2 = attitude_rhs(x + h / 2 * k1, m, coupling)
    k3 = attitude_rhs(x + h / 2 * k2, m, coupling)
    k4 = attitude_rhs(x + h * k3, m, coupling)
    return x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def reference_attitude_filter(x0, P0, Q, R, coupling, h, moments, measurements):
    """Attitude EKF with a central-difference Jacobian; returns the state history."""
    x, P = np.array(x0, dtype=float), np.array(P0, dtype=float)
    H = np.zeros((3, 6))
    H[0, 0] = H[1, 2] = H[2, 4] = 1.0
    out = []
    for m, y in zip(moments, measurements):
        F = central_jacobian(lambda s: attitude_rk4(s, m, coupling, h), x, 1e-6)
        x = attitude_rk4(x, m, coupling, h)
        P = F @ P @ F.T + Q
        resid = np.array([wrap(yi - x[i]) for yi, i in zip(y, (0, 2, 4))])
        S = H @ P @ H.T + R
        K = P @ H.T @ np.linalg.inv(S)
        x = x + K @ resid
        P = (np.eye(6) - K @ H) @ P
        for i in (0, 2, 4):
            x[i] = wrap(x[i])
        out.append(x.copy())
    return np.array(out)
