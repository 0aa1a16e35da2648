"""Error-state linearization of the discrete rigid-body dynamics.

The attitude quaternion is charted by a 3-component rotation vector applied
on the right of the reference quaternion, so linearized problems carry an
18- or 12-dimensional local state with no unit-norm constraint:

    local rigid state: [dp (3), da (3), dv (3), dw (3)]

retract/difference use exact exp/log maps, hence analytic Jacobians here
agree with central finite differences of the charted dynamics to first order.
"""

from __future__ import annotations

import numpy as np

from . import quat
from .dynamics import (
    P, Q, V, W, QuadParams, rk4_ramp_sensitivities, rk4_sensitivities, rk4_step_ramp,
    rk4_step_vec,
)

RIGID_DIM = 12


def retract_rigid(x: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Apply a 12-dim local increment to a 13-dim rigid state."""
    out = x.copy()
    out[P] = x[P] + delta[0:3]
    out[Q] = quat.box_plus(x[Q], delta[3:6])
    out[V] = x[V] + delta[6:9]
    out[W] = x[W] + delta[9:12]
    return out


def rigid_diff(x1: np.ndarray, x0: np.ndarray) -> np.ndarray:
    """Local coordinates of x1 about x0 (inverse of retract_rigid)."""
    return np.concatenate(
        [x1[P] - x0[P], quat.box_minus(x1[Q], x0[Q]), x1[V] - x0[V], x1[W] - x0[W]]
    )


def _lift(q: np.ndarray) -> np.ndarray:
    """13x12 chart lift at a nominal state with quaternion q."""
    t = np.zeros((13, 12))
    t[P, 0:3] = np.eye(3)
    t[Q, 3:6] = quat.tangent_lift(q)
    t[V, 6:9] = np.eye(3)
    t[W, 9:12] = np.eye(3)
    return t


def _project(q: np.ndarray) -> np.ndarray:
    """12x13 chart projection at a nominal state with quaternion q."""
    t = np.zeros((12, 13))
    t[0:3, P] = np.eye(3)
    t[3:6, Q] = quat.tangent_project(q)
    t[6:9, V] = np.eye(3)
    t[9:12, W] = np.eye(3)
    return t


def rigid_discrete_jacobians(x: np.ndarray, f, params: QuadParams, dt: float):
    """RK4 step and its error-state Jacobians.

    Returns (x_next (13,), A (12x12), B (12x4)): x_next is the renormalized
    propagated state, A the sensitivity w.r.t. the local rigid state and B
    w.r.t. the rotor thrusts held over the step.
    """
    x_raw, a_full, b_full = rk4_sensitivities(x, f, params, dt)
    x_next = x_raw.copy()
    q_norm = np.linalg.norm(x_next[Q])
    x_next[Q] = x_next[Q] / q_norm

    # the renormalization q -> q/|q| contributes (I - qq')/|q|; the radial
    # part is annihilated by the chart projection, the 1/|q| scaling is not
    a_full[Q, :] /= q_norm
    b_full[Q, :] /= q_norm

    proj = _project(x_next[Q])
    lift = _lift(x[Q])
    return x_next, proj @ a_full @ lift, proj @ b_full


def rigid_ramp_jacobians(x: np.ndarray, f0, df, params: QuadParams, dt: float):
    """Ramped-thrust RK4 step with error-state Jacobians.

    Returns (x_next (13,), A (12x12), B_f (12x4), B_df (12x4)): sensitivities
    w.r.t. the local rigid state, the thrusts at the step start, and the
    thrust rates applied over the step.
    """
    x_raw, a_full, bf_full, bd_full = rk4_ramp_sensitivities(x, f0, df, params, dt)
    x_next = x_raw.copy()
    q_norm = np.linalg.norm(x_next[Q])
    x_next[Q] = x_next[Q] / q_norm
    a_full[Q, :] /= q_norm
    bf_full[Q, :] /= q_norm
    bd_full[Q, :] /= q_norm
    proj = _project(x_next[Q])
    lift = _lift(x[Q])
    return x_next, proj @ a_full @ lift, proj @ bf_full, proj @ bd_full


def rigid_step(x: np.ndarray, f, params: QuadParams, dt: float) -> np.ndarray:
    return rk4_step_vec(x, f, params, dt)


def rigid_step_ramp(x: np.ndarray, f0, df, params: QuadParams, dt: float) -> np.ndarray:
    return rk4_step_ramp(x, f0, df, params, dt)
