"""Rigid-body quadrotor model with single-rotor thrust inputs and linear drag.

State layout (13 components):
    p (3)  world position [m]
    q (4)  unit attitude quaternion, scalar first; rotate(q, .) maps body
           coordinates into the world frame
    v (3)  world linear velocity [m/s]
    w (3)  body rates [rad/s]

Rotor numbering follows the usual X configuration: the collective thrust is
the sum of the four rotor forces along body z, and the body torque is

    tau_x = l/sqrt(2) * ( f1 + f2 - f3 - f4)
    tau_y = l/sqrt(2) * (-f1 + f2 + f3 - f4)
    tau_z = c_tau     * ( f1 - f2 + f3 - f4)

The translational dynamics include a rotor-frame linear drag term
-R D R^T v with D = diag(d_x, d_y, d_z).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import quat

GRAVITY = -9.81

P = slice(0, 3)
Q = slice(3, 7)
V = slice(7, 10)
W = slice(10, 13)


class IntegrationError(RuntimeError):
    """Raised when a step produces non-finite state components."""


@dataclass
class QuadParams:
    """Physical vehicle parameters (defaults: 0.85 kg racing quad)."""

    mass: float = 0.85
    arm_length: float = 0.15
    inertia: np.ndarray = field(default_factory=lambda: np.array([2.5e-3, 2.1e-3, 4.3e-3]))
    c_tau: float = 0.022
    f_min: float = 0.0
    f_max: float = 7.0
    omega_max: float = 10.0
    drag: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gravity: float = GRAVITY

    def __post_init__(self):
        self.inertia = np.asarray(self.inertia, dtype=float)
        self.drag = np.asarray(self.drag, dtype=float)
        self.validate()

    def validate(self):
        if not self.mass > 0:
            raise ValueError("mass must be positive")
        if not self.arm_length > 0:
            raise ValueError("arm length must be positive")
        if self.inertia.shape != (3,) or not np.all(self.inertia > 0):
            raise ValueError("inertia must be 3 positive diagonal entries")
        if not (0 <= self.f_min < self.f_max):
            raise ValueError("rotor thrust bounds require 0 <= f_min < f_max")
        if not self.omega_max > 0:
            raise ValueError("omega_max must be positive")
        if self.drag.shape != (3,) or np.any(self.drag < 0):
            raise ValueError("drag diagonal must be non-negative")

    @property
    def hover_thrust(self) -> float:
        """Per-rotor thrust that balances gravity."""
        return self.mass * abs(self.gravity) / 4.0

    @property
    def torque_map(self) -> np.ndarray:
        """3x4 matrix mapping rotor thrusts to body torque."""
        k = self.arm_length / np.sqrt(2.0)
        return np.array(
            [[k, k, -k, -k],
             [-k, k, k, -k],
             [self.c_tau, -self.c_tau, self.c_tau, -self.c_tau]]
        )

    def to_json(self, path):
        data = {
            "mass": self.mass,
            "arm_length": self.arm_length,
            "inertia": self.inertia.tolist(),
            "c_tau": self.c_tau,
            "f_min": self.f_min,
            "f_max": self.f_max,
            "omega_max": self.omega_max,
            "drag": self.drag.tolist(),
            "gravity": self.gravity,
        }
        with open(path, "w") as fh:
            json.dump(data, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_json(cls, path) -> "QuadParams":
        with open(path) as fh:
            data = json.load(fh)
        return cls(
            mass=data["mass"],
            arm_length=data["arm_length"],
            inertia=np.asarray(data["inertia"], dtype=float),
            c_tau=data["c_tau"],
            f_min=data["f_min"],
            f_max=data["f_max"],
            omega_max=data["omega_max"],
            drag=np.asarray(data.get("drag", [0.0, 0.0, 0.0]), dtype=float),
            gravity=data.get("gravity", GRAVITY),
        )


@dataclass
class QuadState:
    p: np.ndarray
    q: np.ndarray
    v: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        self.q = np.asarray(self.q, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        self.w = np.asarray(self.w, dtype=float)

    @classmethod
    def hover(cls, position=(0.0, 0.0, 0.0)) -> "QuadState":
        return cls(np.asarray(position, dtype=float), quat.IDENTITY.copy(), np.zeros(3), np.zeros(3))

    @classmethod
    def from_vector(cls, x) -> "QuadState":
        x = np.asarray(x, dtype=float)
        return cls(x[P].copy(), x[Q].copy(), x[V].copy(), x[W].copy())

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.p, self.q, self.v, self.w])

    def copy(self) -> "QuadState":
        return QuadState(self.p.copy(), self.q.copy(), self.v.copy(), self.w.copy())


@dataclass
class RotorThrusts:
    f: np.ndarray

    def __post_init__(self):
        self.f = np.asarray(self.f, dtype=float)
        if self.f.shape != (4,):
            raise ValueError("expected 4 rotor thrusts")


def _thrusts_array(f) -> np.ndarray:
    arr = f.f if isinstance(f, RotorThrusts) else np.asarray(f, dtype=float)
    if arr.shape != (4,):
        raise ValueError("expected 4 rotor thrusts")
    if not np.all(np.isfinite(arr)):
        raise ValueError("rotor thrusts must be finite")
    return arr


def wrench_from_rotors(f, params: QuadParams):
    """Collective thrust (scalar, body z) and body torque for rotor forces."""
    arr = _thrusts_array(f)
    return float(arr.sum()), params.torque_map @ arr


def state_derivative_vec(x: np.ndarray, f, params: QuadParams) -> np.ndarray:
    """Time derivative of the 13-component state vector."""
    arr = _thrusts_array(f)
    q = x[Q]
    v = x[V]
    w = x[W]
    f_t, tau = float(arr.sum()), params.torque_map @ arr

    rot = quat.rotation_matrix(q)
    dv = rot[:, 2] * (f_t / params.mass)
    dv[2] += params.gravity
    if params.drag[0] > 0 or params.drag[1] > 0 or params.drag[2] > 0:
        dv = dv - rot @ (params.drag * (rot.T @ v))

    qw, qx, qy, qz = q
    wx, wy, wz = w
    j = params.inertia
    dw = (tau - quat.cross(w, j * w)) / j

    out = np.empty(13)
    out[P] = v
    # dq = 0.5 * q (x) (0, w), Hamilton product written out
    out[3] = 0.5 * (-qx * wx - qy * wy - qz * wz)
    out[4] = 0.5 * (qw * wx + qy * wz - qz * wy)
    out[5] = 0.5 * (qw * wy - qx * wz + qz * wx)
    out[6] = 0.5 * (qw * wz + qx * wy - qy * wx)
    out[V] = dv
    out[W] = dw
    return out


def state_derivative(state: QuadState, f, params: QuadParams) -> np.ndarray:
    """Derivative of [p, q, v, w]; requires a unit quaternion within 1e-6."""
    x = state.as_vector()
    if abs(np.linalg.norm(x[Q]) - 1.0) > 1e-6:
        raise ValueError("state quaternion is not unit norm")
    return state_derivative_vec(x, f, params)


def rk4_step_vec(x: np.ndarray, f, params: QuadParams, dt: float) -> np.ndarray:
    """Classic RK4 step with rotor thrusts held constant over the step."""
    k1 = state_derivative_vec(x, f, params)
    k2 = state_derivative_vec(x + 0.5 * dt * k1, f, params)
    k3 = state_derivative_vec(x + 0.5 * dt * k2, f, params)
    k4 = state_derivative_vec(x + dt * k3, f, params)
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    out[Q] = out[Q] / np.linalg.norm(out[Q])
    return out


_FIELDS = ("position", "quaternion", "velocity", "body rates")


def integrate_step(state: QuadState, f, dt: float, params: QuadParams) -> QuadState:
    """Advance the state by dt using RK4; the quaternion is renormalized."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    out = rk4_step_vec(state.as_vector(), f, params, dt)
    if not np.all(np.isfinite(out)):
        for name, sl in zip(_FIELDS, (P, Q, V, W)):
            if not np.all(np.isfinite(out[sl])):
                raise IntegrationError(f"non-finite {name} after integration step")
    return QuadState.from_vector(out)


_EYE3 = np.eye(3)
_CONJ4 = np.diag([1.0, -1.0, -1.0, -1.0])


def continuous_jacobians(x: np.ndarray, f, params: QuadParams):
    """Jacobians of state_derivative_vec w.r.t. the state (13x13) and rotor
    thrusts (13x4), evaluated analytically."""
    arr = _thrusts_array(f)
    q = x[Q]
    v = x[V]
    w = x[W]
    f_t = float(arr.sum())
    m = params.mass
    j = params.inertia

    jx = np.zeros((13, 13))
    jf = np.zeros((13, 4))

    # dp/dt = v
    jx[0, 7] = jx[1, 8] = jx[2, 9] = 1.0

    # dq/dt = 0.5 * q * (0, w)
    qw, qx, qy, qz = q
    wx, wy, wz = w
    jx[Q, Q] = 0.5 * np.array(
        [[0.0, -wx, -wy, -wz],
         [wx, 0.0, wz, -wy],
         [wy, -wz, 0.0, wx],
         [wz, wy, -wx, 0.0]]
    )
    jx[Q, W] = 0.5 * np.array(
        [[-qx, -qy, -qz],
         [qw, -qz, qy],
         [qz, qw, -qx],
         [-qy, qx, qw]]
    )

    # dv/dt = g + R e_z f_T / m - R D R^T v
    ez_ft = np.array([0.0, 0.0, f_t / m])
    jx[V, Q] = quat.d_rotate_d_q(q, ez_ft)
    rot = quat.rotation_matrix(q)
    jf[V, :] = (rot[:, 2] / m)[:, None]
    if params.drag[0] > 0 or params.drag[1] > 0 or params.drag[2] > 0:
        d = params.drag
        vb = rot.T @ v
        # product rule: d/dq [R (D R^T v)] with R^T via the conjugate
        jx[V, Q] -= quat.d_rotate_d_q(q, d * vb)
        d_rtv_dq = quat.d_rotate_d_q(quat.conjugate(q), v) @ _CONJ4
        jx[V, Q] -= rot @ (d[:, None] * d_rtv_dq)
        jx[V, V] = -rot @ (d[:, None] * rot.T)

    # dw/dt = J^-1 (tau - w x Jw)
    jx[W, W] = (quat.skew(j * w) - quat.skew(w) * j[None, :]) / j[:, None]
    jf[W, :] = params.torque_map / j[:, None]

    return jx, jf


def rk4_step_ramp(x: np.ndarray, f0, df, params: QuadParams, dt: float) -> np.ndarray:
    """RK4 step with the rotor thrusts ramping linearly over the step,
    f(tau) = f0 + df * tau, matching thrust-rate-driven thrust states."""
    f0 = np.asarray(f0, dtype=float)
    df = np.asarray(df, dtype=float)
    f_mid = f0 + 0.5 * dt * df
    f_end = f0 + dt * df
    k1 = state_derivative_vec(x, f0, params)
    k2 = state_derivative_vec(x + 0.5 * dt * k1, f_mid, params)
    k3 = state_derivative_vec(x + 0.5 * dt * k2, f_mid, params)
    k4 = state_derivative_vec(x + dt * k3, f_end, params)
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    out[Q] = out[Q] / np.linalg.norm(out[Q])
    return out


def rk4_ramp_sensitivities(x: np.ndarray, f0, df, params: QuadParams, dt: float):
    """Ramped-thrust RK4 step with Jacobians of the (unnormalized) end state
    w.r.t. the state (13x13), the initial thrusts (13x4), and the thrust
    rates (13x4)."""
    f0 = np.asarray(f0, dtype=float)
    df = np.asarray(df, dtype=float)
    f_mid = f0 + 0.5 * dt * df
    f_end = f0 + dt * df
    eye = np.eye(13)

    k1 = state_derivative_vec(x, f0, params)
    j1x, j1f = continuous_jacobians(x, f0, params)
    x2 = x + 0.5 * dt * k1
    k2 = state_derivative_vec(x2, f_mid, params)
    j2x, j2f = continuous_jacobians(x2, f_mid, params)
    x3 = x + 0.5 * dt * k2
    k3 = state_derivative_vec(x3, f_mid, params)
    j3x, j3f = continuous_jacobians(x3, f_mid, params)
    x4 = x + dt * k3
    k4 = state_derivative_vec(x4, f_end, params)
    j4x, j4f = continuous_jacobians(x4, f_end, params)

    a1, bf1, bd1 = j1x, j1f, np.zeros((13, 4))
    a2 = j2x @ (eye + 0.5 * dt * a1)
    bf2 = j2f + 0.5 * dt * j2x @ bf1
    bd2 = 0.5 * dt * j2f + 0.5 * dt * j2x @ bd1
    a3 = j3x @ (eye + 0.5 * dt * a2)
    bf3 = j3f + 0.5 * dt * j3x @ bf2
    bd3 = 0.5 * dt * j3f + 0.5 * dt * j3x @ bd2
    a4 = j4x @ (eye + dt * a3)
    bf4 = j4f + dt * j4x @ bf3
    bd4 = dt * j4f + dt * j4x @ bd3

    x_next = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    a_full = eye + (dt / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
    bf_full = (dt / 6.0) * (bf1 + 2.0 * bf2 + 2.0 * bf3 + bf4)
    bd_full = (dt / 6.0) * (2.0 * bd2 + 2.0 * bd3 + bd4)
    return x_next, a_full, bf_full, bd_full


def rk4_sensitivities(x: np.ndarray, f, params: QuadParams, dt: float):
    """One RK4 step plus Jacobians of the (unnormalized) end state.

    Returns (x_next, A, B) with A = d x_next / d x (13x13) and
    B = d x_next / d f (13x4), chained through the four stages.
    """
    arr = _thrusts_array(f)

    def stage(xs):
        k = state_derivative_vec(xs, arr, params)
        jx, jf = continuous_jacobians(xs, arr, params)
        return k, jx, jf

    eye = np.eye(13)
    k1, j1x, j1f = stage(x)
    x2 = x + 0.5 * dt * k1
    k2, j2x, j2f = stage(x2)
    x3 = x + 0.5 * dt * k2
    k3, j3x, j3f = stage(x3)
    x4 = x + dt * k3
    k4, j4x, j4f = stage(x4)

    a1 = j1x
    b1 = j1f
    a2 = j2x @ (eye + 0.5 * dt * a1)
    b2 = j2f + 0.5 * dt * j2x @ b1
    a3 = j3x @ (eye + 0.5 * dt * a2)
    b3 = j3f + 0.5 * dt * j3x @ b2
    a4 = j4x @ (eye + dt * a3)
    b4 = j4f + dt * j4x @ b3

    x_next = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    a_full = eye + (dt / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
    b_full = (dt / 6.0) * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
    return x_next, a_full, b_full
