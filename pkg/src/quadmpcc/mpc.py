"""Baseline trajectory-tracking MPC over the same dynamics and QP machinery.

Tracks a time-stamped state/input reference with a quadratic penalty on
deviations, one Gauss-Newton real-time iteration per update. Rotor thrusts
are the inputs (box constrained), body rates are bounded through condensed
state rows, and the attitude error uses the same 3-parameter local chart as
the contouring controller.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from . import quat
from .dynamics import QuadParams, QuadState
from .linearize import rigid_diff, rigid_discrete_jacobians, retract_rigid
from .qp import QpProblem, QpSolution, solve_qp

_STATE_COLS = ["px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz", "wx", "wy", "wz"]
_INPUT_COLS = ["f1", "f2", "f3", "f4"]


class TimedReference:
    """Time-stamped (state, input) samples with interpolation.

    Vector components interpolate linearly, the quaternion spherically;
    queries beyond either end clamp to the boundary sample.
    """

    def __init__(self, times, states, inputs):
        self.times = np.asarray(times, dtype=float)
        self.states = np.asarray(states, dtype=float)
        self.inputs = np.asarray(inputs, dtype=float)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("reference timestamps must be strictly increasing")
        if self.states.shape != (len(self.times), 13) or self.inputs.shape != (len(self.times), 4):
            raise ValueError("reference needs 13 state and 4 input columns per sample")
        norms = np.linalg.norm(self.states[:, 3:7], axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError("reference quaternions must be unit norm")
        self.states[:, 3:7] /= norms[:, None]

    @property
    def duration(self):
        return float(self.times[-1])

    def interpolate(self, t: float):
        ts = self.times
        if t <= ts[0]:
            return self.states[0].copy(), self.inputs[0].copy()
        if t >= ts[-1]:
            return self.states[-1].copy(), self.inputs[-1].copy()
        i = int(np.searchsorted(ts, t, side="right") - 1)
        a = (t - ts[i]) / (ts[i + 1] - ts[i])
        x = (1.0 - a) * self.states[i] + a * self.states[i + 1]
        x[3:7] = quat.slerp(self.states[i, 3:7], self.states[i + 1, 3:7], a)
        u = (1.0 - a) * self.inputs[i] + a * self.inputs[i + 1]
        return x, u

    @classmethod
    def from_point_trajectory(cls, times, positions, velocities, params: QuadParams):
        """Naive lift of a (t, p, v) path: level attitude, hover thrusts."""
        n = len(times)
        states = np.zeros((n, 13))
        states[:, 0:3] = positions
        states[:, 3] = 1.0
        states[:, 7:10] = velocities
        inputs = np.full((n, 4), params.hover_thrust)
        return cls(times, states, inputs)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t"] + _STATE_COLS + _INPUT_COLS)
            for t, x, u in zip(self.times, self.states, self.inputs):
                writer.writerow([f"{v:.12g}" for v in (t, *x, *u)])

    @classmethod
    def from_csv(cls, path) -> "TimedReference":
        times, states, inputs = [], [], []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                times.append(float(row["t"]))
                states.append([float(row[c]) for c in _STATE_COLS])
                inputs.append([float(row[c]) for c in _INPUT_COLS])
        return cls(np.array(times), np.array(states), np.array(inputs))


@dataclass
class MpcWeights:
    q_pos: np.ndarray = field(default_factory=lambda: np.full(3, 120.0))
    q_att: np.ndarray = field(default_factory=lambda: np.full(3, 15.0))
    q_vel: np.ndarray = field(default_factory=lambda: np.full(3, 15.0))
    q_omega: np.ndarray = field(default_factory=lambda: np.full(3, 1.0))
    r_f: np.ndarray = field(default_factory=lambda: np.full(4, 0.5))
    terminal_scale: float = 2.0

    def q_diag(self):
        return np.concatenate([self.q_pos, self.q_att, self.q_vel, self.q_omega]).astype(float)

    def r_diag(self):
        return np.asarray(self.r_f, dtype=float)


@dataclass
class MpcStats:
    solve_ms: float
    qp_iterations: int
    qp_status: str
    objective: float
    degraded: bool = False


class MpcController:
    """Tracking MPC with RTI warm starts; step() mirrors MpccController."""

    def __init__(self, reference: TimedReference, params: QuadParams,
                 weights: MpcWeights | None = None, horizon: int = 20, dt: float = 0.05):
        self.ref = reference
        self.params = params
        self.weights = weights or MpcWeights()
        self.horizon = horizon
        self.dt = dt

        self.lin_x = np.zeros((horizon + 1, 13))
        self.lin_u = np.zeros((horizon, 4))
        self.initialized = False
        self.qp_solution: QpSolution | None = None
        self.degraded_steps = 0
        self.f_cmd = np.full(4, np.clip(params.hover_thrust, params.f_min, params.f_max))
        self._t_solved = None
        self.last_stats = None

    def _window(self, t_now: float):
        xs, us = [], []
        for k in range(self.horizon + 1):
            x, u = self.ref.interpolate(t_now + k * self.dt)
            xs.append(x)
            us.append(u)
        return np.asarray(xs), np.asarray(us)

    def mpc_step(self, x0: np.ndarray, f_now: np.ndarray, t_now: float):
        """One real-time iteration of the tracking QP.

        Returns (u0, pred_x (N+1,13), pred_u (N,4), MpcStats).
        """
        tic = time.perf_counter()
        n = self.horizon
        dt = self.dt
        ref_x, ref_u = self._window(t_now)

        if not self.initialized:
            self.lin_x[:] = ref_x
            self.lin_x[0] = x0
            self.lin_u[:] = np.clip(ref_u[:n], self.params.f_min, self.params.f_max)
            self.initialized = True
        else:
            self.lin_x[0] = x0

        a_list = np.empty((n, 12, 12))
        b_list = np.empty((n, 12, 4))
        defects = np.empty((n, 12))
        for k in range(n):
            x_next, a_k, b_k = rigid_discrete_jacobians(self.lin_x[k], self.lin_u[k], self.params, dt)
            if not np.all(np.isfinite(x_next)):
                raise RuntimeError("non-finite MPC linearization")
            a_list[k] = a_k
            b_list[k] = b_k
            defects[k] = rigid_diff(x_next, self.lin_x[k + 1])

        q_diag = self.weights.q_diag()
        r_diag = self.weights.r_diag()
        nz = n * 4
        h_cond = np.zeros((nz, nz))
        g_cond = np.zeros(nz)
        lb = np.empty(nz)
        ub = np.empty(nz)
        for k in range(n):
            sl = slice(4 * k, 4 * (k + 1))
            h_cond[sl, sl] += 2.0 * np.diag(r_diag)
            g_cond[sl] += 2.0 * r_diag * (self.lin_u[k] - ref_u[k])
            lb[sl] = self.params.f_min - self.lin_u[k]
            ub[sl] = self.params.f_max - self.lin_u[k]

        rows_f = np.zeros((12, nz))
        phi = np.zeros(12)
        stage_rows = np.empty((n + 1, 12, nz))
        stage_phi = np.empty((n + 1, 12))
        stage_rows[0] = 0.0
        stage_phi[0] = 0.0
        g_rows = np.empty((3 * n, nz))
        g_lo = np.empty(3 * n)
        g_hi = np.empty(3 * n)
        for k in range(n):
            rows_f = a_list[k] @ rows_f
            rows_f[:, 4 * k : 4 * (k + 1)] += b_list[k]
            phi = a_list[k] @ phi + defects[k]
            stage_rows[k + 1] = rows_f
            stage_phi[k + 1] = phi

            scale = self.weights.terminal_scale if k + 1 == n else 1.0
            qk = 2.0 * scale * q_diag
            resid = rigid_diff(self.lin_x[k + 1], ref_x[k + 1])
            h_cond += rows_f.T @ (qk[:, None] * rows_f)
            g_cond += rows_f.T @ (qk * (phi + resid))

            srow = slice(3 * k, 3 * (k + 1))
            g_rows[srow] = rows_f[9:12]
            w_nom = self.lin_x[k + 1][10:13] + phi[9:12]
            g_lo[srow] = -self.params.omega_max - w_nom
            g_hi[srow] = self.params.omega_max - w_nom

        h_cond = 0.5 * (h_cond + h_cond.T)
        problem = QpProblem(
            hessian=h_cond, gradient=g_cond, lower=lb, upper=ub,
            g_ineq=g_rows, g_lower=g_lo, g_upper=g_hi,
        )
        sol = solve_qp(problem, warm_start=self.qp_solution)

        degraded = sol.status != "optimal"
        if degraded:
            self.degraded_steps += 1
            du = np.zeros(nz)
        else:
            self.qp_solution = sol
            du = sol.z

        pred_u = np.clip(self.lin_u + du.reshape(n, 4), self.params.f_min, self.params.f_max)
        pred_x = np.empty((n + 1, 13))
        pred_x[0] = x0
        for k in range(n):
            delta = stage_rows[k + 1] @ du + stage_phi[k + 1]
            pred_x[k + 1] = retract_rigid(self.lin_x[k + 1], delta)

        stats = MpcStats(
            solve_ms=1e3 * (time.perf_counter() - tic),
            qp_iterations=sol.iterations,
            qp_status=sol.status,
            objective=sol.objective,
            degraded=degraded,
        )
        self.lin_x = pred_x.copy()
        self.lin_u = pred_u.copy()
        return pred_u[0].copy(), pred_x, pred_u, stats

    def _shift(self):
        self.lin_x[:-1] = self.lin_x[1:]
        self.lin_u[:-1] = self.lin_u[1:]

    def step(self, obs: QuadState, t: float, period: float):
        """Thrust command for [t, t + period); re-solves every self.dt."""
        if not self.initialized or (t - self._t_solved) >= self.dt - 1e-9:
            if self.initialized:
                self._shift()
            u0, _, _, stats = self.mpc_step(obs.as_vector(), self.f_cmd, t)
            self._t_solved = t
            self.f_cmd = u0
            self.last_stats = stats
        return self.f_cmd.copy()
