"""Progress-maximizing contouring controller over the full quadrotor model.

The vehicle state is augmented with the four rotor thrusts (driven by rate
inputs), the path progress theta, and its rate v_theta (driven by a virtual
progress acceleration). Each control update performs one Gauss-Newton
real-time iteration: the path segment per stage is frozen at the progress
predicted by the previous solution, dynamics are linearized about the
shifted previous trajectory, the cost is quadratized, and the condensed QP
is solved warm-started. The running cost trades off lag and contour error
against progress rate, with body-rate and input-rate regularization:

    q_l*|e_l|^2 + q_c(theta)*|e_c|^2 + |w - w_ref|^2_Qw
        + r_dv*dv_theta^2 + |df|^2_Rdf - mu*v_theta

The contour weight q_c(theta) is a floor value q_nom blended to a peak q_wp
by Gaussian bumps centered on the gates, so path tracking is enforced
sharply where it matters and progress dominates elsewhere.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import quat
from .arc_path import ArcSpline
from .dynamics import QuadParams, QuadState
from .linearize import rigid_diff, rigid_ramp_jacobians, rigid_step_ramp, retract_rigid
from .qp import QpProblem, QpSolution, solve_qp

# full augmented state layout (19): p 0:3 | q 3:7 | v 7:10 | w 10:13 | f 13:17 | th 17 | vth 18
# local coordinates (18):           p 0:3 | a 3:6 | v 6:9 | w 9:12  | f 12:16 | th 16 | vth 17
NX_FULL = 19
NX = 18
NU = 5
_F_FULL = slice(13, 17)
_F_LOC = slice(12, 16)
_W_LOC = slice(9, 12)
_TH = 16
_VTH = 17


class ControllerFault(RuntimeError):
    """Non-recoverable controller failure (non-finite linearization)."""


@dataclass
class MpccConfig:
    horizon: int = 20
    dt: float = 0.05
    q_l: float = 2000.0
    q_nom: float = 100.0
    q_wp: float = 8000.0
    sigma: float = 0.5
    mu: float = 500.0
    q_omega: np.ndarray = field(default_factory=lambda: np.full(3, 4.0))
    r_dv: float = 0.01
    r_df: np.ndarray = field(default_factory=lambda: np.full(4, 0.05))
    omega_z_ref: float = 0.0
    v_theta_max: float = 12.0
    dv_theta_max: float = 30.0
    df_max: float = 250.0
    qp_max_iter: int = 500

    def __post_init__(self):
        self.q_omega = np.asarray(self.q_omega, dtype=float)
        self.r_df = np.asarray(self.r_df, dtype=float)
        self.validate()

    def validate(self):
        if self.horizon < 2:
            raise ValueError("horizon must be >= 2")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.q_l > 0 or not self.mu > 0:
            raise ValueError("q_l and mu must be positive")
        for name, val in (("q_nom", self.q_nom), ("q_wp", self.q_wp),
                          ("r_dv", self.r_dv), ("sigma", self.sigma)):
            if val < 0:
                raise ValueError(f"{name} must be non-negative")
        if np.any(self.q_omega < 0) or np.any(self.r_df < 0):
            raise ValueError("weight matrices must be non-negative")
        if self.v_theta_max <= 0 or self.dv_theta_max <= 0 or self.df_max <= 0:
            raise ValueError("bounds must be positive")

    def check_against_track(self, track):
        """Adjacent-gate Gaussians must not overlap at three sigma."""
        pos = track.gate_positions()
        if len(pos) < 2:
            return
        pairs = list(zip(pos[:-1], pos[1:]))
        if track.closed:
            pairs.append((pos[-1], pos[0]))
        for a, b in pairs:
            if np.linalg.norm(a - b) < 6.0 * self.sigma:
                raise ValueError(
                    "sigma too wide: adjacent gate weight bumps overlap at 3 sigma"
                )

    def to_json(self, path):
        data = {
            "horizon": self.horizon, "dt": self.dt, "q_l": self.q_l,
            "q_nom": self.q_nom, "q_wp": self.q_wp, "sigma": self.sigma,
            "mu": self.mu, "q_omega": self.q_omega.tolist(),
            "r_dv": self.r_dv, "r_df": self.r_df.tolist(),
            "omega_z_ref": self.omega_z_ref, "v_theta_max": self.v_theta_max,
            "dv_theta_max": self.dv_theta_max, "df_max": self.df_max,
        }
        with open(path, "w") as fh:
            json.dump(data, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_json(cls, path) -> "MpccConfig":
        with open(path) as fh:
            data = json.load(fh)
        return cls(**{k: (np.asarray(v) if isinstance(v, list) else v) for k, v in data.items()})


@dataclass
class AugmentedState:
    quad: QuadState
    f: np.ndarray
    theta: float
    v_theta: float

    def as_vector(self) -> np.ndarray:
        return np.concatenate(
            [self.quad.as_vector(), np.asarray(self.f, dtype=float),
             [self.theta, self.v_theta]]
        )

    @classmethod
    def from_vector(cls, x) -> "AugmentedState":
        x = np.asarray(x, dtype=float)
        return cls(QuadState.from_vector(x[:13]), x[_F_FULL].copy(), float(x[17]), float(x[18]))


@dataclass
class MpccInput:
    dv_theta: float
    df: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate([[self.dv_theta], np.asarray(self.df, dtype=float)])

    @classmethod
    def from_vector(cls, u) -> "MpccInput":
        u = np.asarray(u, dtype=float)
        return cls(float(u[0]), u[1:5].copy())


def contour_lag_errors(p, theta_hat, spline: ArcSpline):
    """Orthogonal split of the position error about the path point at
    theta_hat: the lag component lies along the unit tangent, the contour
    component in the normal plane. They satisfy e_c + e_l = p - p_d and
    e_c . e_l = 0 exactly."""
    p_d, t = spline.eval(theta_hat)
    e = np.asarray(p, dtype=float) - p_d
    e_l = (t @ e) * t
    return e - e_l, e_l


def dynamic_qc(theta, spline: ArcSpline, track, cfg: MpccConfig):
    """Contour weight at progress theta: q_nom floor, q_wp peak at gates."""
    p_d, _ = spline.eval(theta)
    d2 = np.sum((track.gate_positions() - p_d) ** 2, axis=1)
    bump = np.exp(-0.5 * d2.min() / cfg.sigma**2)
    return float(cfg.q_nom + (cfg.q_wp - cfg.q_nom) * bump)


def stage_cost(x: AugmentedState, u: MpccInput, spline, track, cfg: MpccConfig):
    """Running cost of one stage (used directly in tests; the controller
    consumes its Gauss-Newton quadratization)."""
    e_c, e_l = contour_lag_errors(x.quad.p, x.theta, spline)
    q_c = dynamic_qc(x.theta, spline, track, cfg)
    w_err = x.quad.w - np.array([0.0, 0.0, cfg.omega_z_ref])
    return float(
        cfg.q_l * (e_l @ e_l)
        + q_c * (e_c @ e_c)
        + w_err @ (cfg.q_omega * w_err)
        + cfg.r_dv * u.dv_theta**2
        + u.df @ (cfg.r_df * u.df)
        - cfg.mu * x.v_theta
    )


class FrozenSegment:
    """One cubic path segment pinned for a whole RTI iteration.

    Evaluation is polynomial in theta (no segment re-selection), so the
    residual Jacobians below are exact for the frozen problem. Beyond the
    end of an open path the segment degenerates to its endpoint with zero
    progress sensitivity.
    """

    def __init__(self, spline: ArcSpline, theta_bar: float):
        coeffs, knot_start, clamped = spline.segment_at(theta_bar)
        self.c = coeffs
        if spline.closed:
            s_local = (theta_bar % spline.length) - knot_start
            self.offset = theta_bar - s_local
            self.clamp_s = None
        elif clamped:
            self.offset = None
            self.clamp_s = min(max(theta_bar, 0.0), spline.length) - knot_start
        else:
            self.offset = knot_start
            self.clamp_s = None

    def _s(self, theta):
        if self.clamp_s is not None:
            return self.clamp_s, 0.0
        return theta - self.offset, 1.0

    def eval(self, theta):
        """Position, first and second s-derivatives, and d s/d theta."""
        s, ds_dth = self._s(theta)
        c0, c1, c2, c3 = self.c
        pos = c0 + s * (c1 + s * (c2 + s * c3))
        d1 = c1 + s * (2.0 * c2 + 3.0 * s * c3)
        d2 = 2.0 * c2 + 6.0 * s * c3
        return pos, d1, d2, ds_dth


def path_residuals(p, theta, seg: FrozenSegment):
    """Lag/contour residuals and exact Jacobians w.r.t. (p, theta).

    Returns (r_l, r_c, j_l (4,), j_c (3,4)); Jacobian columns are the three
    position components followed by theta.
    """
    p = np.asarray(p, dtype=float)
    pos, d1, d2, ds_dth = seg.eval(theta)
    speed = np.linalg.norm(d1)
    t = d1 / speed
    e = p - pos
    proj = np.eye(3) - np.outer(t, t)
    t_prime = (proj @ d2) / speed  # tangent derivative w.r.t. s

    r_l = float(t @ e)
    r_c = proj @ e

    j_l = np.empty(4)
    j_l[:3] = t
    j_l[3] = (t_prime @ e - speed) * ds_dth

    j_c = np.empty((3, 4))
    j_c[:, :3] = proj
    j_c[:, 3] = -(np.outer(t_prime, t) + np.outer(t, t_prime)) @ e * ds_dth
    return r_l, r_c, j_l, j_c


def augmented_step(x: np.ndarray, u: np.ndarray, params: QuadParams, dt: float) -> np.ndarray:
    """Discrete prediction model: RK4 rigid body with the thrusts ramping at
    the commanded rate over the step, exact Euler updates for thrusts,
    progress, and progress rate."""
    out = np.empty(NX_FULL)
    out[:13] = rigid_step_ramp(x[:13], x[_F_FULL], u[1:5], params, dt)
    out[_F_FULL] = x[_F_FULL] + u[1:5] * dt
    out[17] = x[17] + x[18] * dt
    out[18] = x[18] + u[0] * dt
    return out


def augmented_jacobians(x: np.ndarray, u: np.ndarray, params: QuadParams, dt: float):
    """Discrete step with error-state Jacobians A (18x18), B (18x5)."""
    x13, a_rigid, b_f, b_df = rigid_ramp_jacobians(x[:13], x[_F_FULL], u[1:5], params, dt)
    x_next = np.empty(NX_FULL)
    x_next[:13] = x13
    x_next[_F_FULL] = x[_F_FULL] + u[1:5] * dt
    x_next[17] = x[17] + x[18] * dt
    x_next[18] = x[18] + u[0] * dt

    a = np.zeros((NX, NX))
    a[:12, :12] = a_rigid
    a[:12, _F_LOC] = b_f
    a[_F_LOC, _F_LOC] = np.eye(4)
    a[_TH, _TH] = 1.0
    a[_TH, _VTH] = dt
    a[_VTH, _VTH] = 1.0

    b = np.zeros((NX, NU))
    b[:12, 1:5] = b_df
    b[_F_LOC, 1:5] = dt * np.eye(4)
    b[_VTH, 0] = dt
    return x_next, a, b


def aug_diff(x1: np.ndarray, x0: np.ndarray) -> np.ndarray:
    out = np.empty(NX)
    out[:12] = rigid_diff(x1[:13], x0[:13])
    out[_F_LOC] = x1[_F_FULL] - x0[_F_FULL]
    out[_TH] = x1[17] - x0[17]
    out[_VTH] = x1[18] - x0[18]
    return out


def aug_retract(x: np.ndarray, delta: np.ndarray) -> np.ndarray:
    out = np.empty(NX_FULL)
    out[:13] = retract_rigid(x[:13], delta[:12])
    out[_F_FULL] = x[_F_FULL] + delta[_F_LOC]
    out[17] = x[17] + delta[_TH]
    out[18] = x[18] + delta[_VTH]
    return out


@dataclass
class RtiStats:
    solve_ms: float
    qp_iterations: int
    qp_status: str
    objective: float
    e_c_norm: float
    degraded: bool = False


@dataclass
class RtiResult:
    u0: np.ndarray
    pred_x: np.ndarray  # (N+1, 19)
    pred_u: np.ndarray  # (N, 5)
    stats: RtiStats


class MpccController:
    """Receding-horizon contouring controller with internal warm starts.

    One instance owns its linearization trajectory, virtual progress state,
    and thrust command; call step() at the feedback rate and it re-solves
    every `cfg.dt` of simulated time, interpolating its latest prediction
    in between.
    """

    def __init__(self, spline: ArcSpline, track, cfg: MpccConfig, params: QuadParams):
        cfg.check_against_track(track)
        self.spline = spline
        self.track = track
        self.cfg = cfg
        self.params = params

        n = cfg.horizon
        self.lin_x = np.zeros((n + 1, NX_FULL))
        self.lin_u = np.zeros((n, NU))
        self.initialized = False
        self.qp_solution: QpSolution | None = None
        self.degraded_steps = 0

        # feedback-rate internal states
        self.f_cmd = np.full(4, np.clip(params.hover_thrust, params.f_min, params.f_max))
        self.theta_hat = 0.0
        self.vtheta_hat = 0.0
        self._t_solved = None
        self._sol0 = None  # (f0, df0, th0, vth0, dvth0) of the active solution

        sel = np.zeros((8, NX))
        for row, idx in enumerate((9, 10, 11, 12, 13, 14, 15, 17)):
            sel[row, idx] = 1.0
        self._sel = sel
        p = params
        self._state_lb = np.array([-p.omega_max] * 3 + [p.f_min] * 4 + [0.0])
        self._state_ub = np.array([p.omega_max] * 3 + [p.f_max] * 4 + [cfg.v_theta_max])
        self._input_lb = np.array([-cfg.dv_theta_max] + [-cfg.df_max] * 4)
        self._input_ub = np.array([cfg.dv_theta_max] + [cfg.df_max] * 4)

    # -- setup -----------------------------------------------------------

    def _initialize(self, obs: QuadState, warmup_iters: int = 8):
        self.theta_hat = self.spline.project(obs.p)
        _, tangent = self.spline.eval(self.theta_hat)
        self.vtheta_hat = float(np.clip(obs.v @ tangent, 0.0, self.cfg.v_theta_max))
        x0 = self._assemble(obs)
        self.lin_x[:] = x0  # hover-hold linearization for the first solve
        self.lin_u[:] = 0.0
        self.initialized = True
        # burn a few iterations so the first applied plan is RTI-converged
        for _ in range(warmup_iters):
            self.rti_step(x0)

    def _assemble(self, obs: QuadState) -> np.ndarray:
        return np.concatenate(
            [obs.as_vector(), self.f_cmd, [self.theta_hat, self.vtheta_hat]]
        )

    # -- one real-time iteration ----------------------------------------

    def rti_step(self, x0: np.ndarray) -> RtiResult:
        tic = time.perf_counter()
        cfg = self.cfg
        n = cfg.horizon
        dt = cfg.dt
        self.lin_x[0] = x0

        a_list = np.empty((n, NX, NX))
        b_list = np.empty((n, NX, NU))
        defects = np.empty((n, NX))
        for k in range(n):
            x_next, a_k, b_k = augmented_jacobians(self.lin_x[k], self.lin_u[k], self.params, dt)
            if not (np.all(np.isfinite(a_k)) and np.all(np.isfinite(x_next))):
                raise ControllerFault(f"non-finite linearization at stage {k}")
            a_list[k] = a_k
            b_list[k] = b_k
            defects[k] = aug_diff(x_next, self.lin_x[k + 1])

        q_blocks = np.zeros((n + 1, NX, NX))
        q_grads = np.zeros((n + 1, NX))
        for k in range(1, n + 1):
            xk = self.lin_x[k]
            seg = FrozenSegment(self.spline, xk[17])
            r_l, r_c, j_l, j_c = path_residuals(xk[:3], xk[17], seg)
            q_c = dynamic_qc(xk[17], self.spline, self.track, cfg)

            cols = (0, 1, 2, _TH)
            jl_full = np.zeros(NX)
            jl_full[list(cols)] = j_l
            jc_full = np.zeros((3, NX))
            jc_full[:, list(cols)] = j_c

            q_blocks[k] += 2.0 * cfg.q_l * np.outer(jl_full, jl_full)
            q_grads[k] += 2.0 * cfg.q_l * r_l * jl_full
            q_blocks[k] += 2.0 * q_c * (jc_full.T @ jc_full)
            q_grads[k] += 2.0 * q_c * (jc_full.T @ r_c)

            w_err = xk[10:13] - np.array([0.0, 0.0, cfg.omega_z_ref])
            q_blocks[k][_W_LOC, _W_LOC] += 2.0 * np.diag(cfg.q_omega)
            q_grads[k][_W_LOC] += 2.0 * cfg.q_omega * w_err

            q_grads[k][_VTH] -= cfg.mu

        # condense onto the stacked inputs
        nz = n * NU
        h_cond = np.zeros((nz, nz))
        g_cond = np.zeros(nz)
        r_in = 2.0 * np.diag(np.concatenate([[cfg.r_dv], cfg.r_df]))
        lb = np.empty(nz)
        ub = np.empty(nz)
        for k in range(n):
            sl = slice(k * NU, (k + 1) * NU)
            h_cond[sl, sl] += r_in
            g_cond[sl] += r_in @ self.lin_u[k]
            lb[sl] = self._input_lb - self.lin_u[k]
            ub[sl] = self._input_ub - self.lin_u[k]

        n_rows = self._sel.shape[0]
        rows_f = np.zeros((NX, nz))
        phi = np.zeros(NX)
        g_rows = np.empty((n * n_rows, nz))
        g_lo = np.empty(n * n_rows)
        g_hi = np.empty(n * n_rows)
        stage_rows = np.empty((n + 1, NX, nz))
        stage_phi = np.empty((n + 1, NX))
        stage_rows[0] = 0.0
        stage_phi[0] = 0.0
        for k in range(n):
            rows_f = a_list[k] @ rows_f
            rows_f[:, k * NU : (k + 1) * NU] += b_list[k]
            phi = a_list[k] @ phi + defects[k]
            stage_rows[k + 1] = rows_f
            stage_phi[k + 1] = phi

            h_cond += rows_f.T @ q_blocks[k + 1] @ rows_f
            g_cond += rows_f.T @ (q_blocks[k + 1] @ phi + q_grads[k + 1])

            srow = slice(k * n_rows, (k + 1) * n_rows)
            g_rows[srow] = self._sel @ rows_f
            sel_nominal = self.lin_x[k + 1][[10, 11, 12, 13, 14, 15, 16, 18]]
            offset = self._sel @ phi
            g_lo[srow] = self._state_lb - sel_nominal - offset
            g_hi[srow] = self._state_ub - sel_nominal - offset

        h_cond = 0.5 * (h_cond + h_cond.T)
        if not (np.all(np.isfinite(h_cond)) and np.all(np.isfinite(g_cond))):
            raise ControllerFault("non-finite condensed QP data")
        problem = QpProblem(
            hessian=h_cond, gradient=g_cond, lower=lb, upper=ub,
            g_ineq=g_rows, g_lower=g_lo, g_upper=g_hi,
        )
        try:
            sol = solve_qp(problem, warm_start=self.qp_solution, max_iter=cfg.qp_max_iter)
        except np.linalg.LinAlgError as exc:
            raise ControllerFault(f"QP factorization failed: {exc}") from exc

        degraded = sol.status != "optimal"
        if degraded:
            self.degraded_steps += 1
            du = np.zeros(nz)  # fall back to the shifted previous inputs
        else:
            self.qp_solution = sol
            du = sol.z

        pred_x = np.empty((n + 1, NX_FULL))
        pred_u = self.lin_u + du.reshape(n, NU)
        pred_x[0] = x0
        for k in range(n):
            delta = stage_rows[k + 1] @ du + stage_phi[k + 1]
            pred_x[k + 1] = aug_retract(self.lin_x[k + 1], delta)
            pred_x[k + 1][_F_FULL] = np.clip(
                pred_x[k + 1][_F_FULL], self.params.f_min, self.params.f_max
            )
            pred_x[k + 1][18] = np.clip(pred_x[k + 1][18], 0.0, cfg.v_theta_max)
        pred_u[:, 0] = np.clip(pred_u[:, 0], -cfg.dv_theta_max, cfg.dv_theta_max)
        pred_u[:, 1:] = np.clip(pred_u[:, 1:], -cfg.df_max, cfg.df_max)

        e_c, _ = contour_lag_errors(x0[:3], x0[17], self.spline)
        stats = RtiStats(
            solve_ms=1e3 * (time.perf_counter() - tic),
            qp_iterations=sol.iterations,
            qp_status=sol.status,
            objective=sol.objective,
            e_c_norm=float(np.linalg.norm(e_c)),
            degraded=degraded,
        )

        # store the new linearization (shifted on the next solve)
        self.lin_x = pred_x.copy()
        self.lin_u = pred_u.copy()
        return RtiResult(u0=pred_u[0].copy(), pred_x=pred_x, pred_u=pred_u, stats=stats)

    def _shift(self):
        self.lin_x[:-1] = self.lin_x[1:]
        self.lin_u[:-1] = self.lin_u[1:]

    # -- feedback-rate interface ------------------------------------------

    def step(self, obs: QuadState, t: float, period: float):
        """Thrust command for the interval [t, t + period)."""
        if not self.initialized:
            self._initialize(obs)
            result = self.rti_step(self._assemble(obs))
            self._t_solved = t
            self._store_sol0(result)
            self.last_stats = result.stats
        elif t - self._t_solved >= self.cfg.dt - 1e-9:
            self._shift()
            result = self.rti_step(self._assemble(obs))
            self._t_solved = t
            self._store_sol0(result)
            self.last_stats = result.stats

        tau = (t - self._t_solved) + period
        f0, df0, th0, vth0, dvth0 = self._sol0
        self.f_cmd = np.clip(f0 + df0 * tau, self.params.f_min, self.params.f_max)
        vth = np.clip(vth0 + dvth0 * tau, 0.0, self.cfg.v_theta_max)
        self.theta_hat = th0 + vth0 * tau + 0.5 * dvth0 * tau * tau
        self.vtheta_hat = float(vth)
        return self.f_cmd.copy()

    def _store_sol0(self, result: RtiResult):
        x0 = result.pred_x[0]
        self._sol0 = (
            x0[_F_FULL].copy(), result.u0[1:5].copy(),
            float(x0[17]), float(x0[18]), float(result.u0[0]),
        )
