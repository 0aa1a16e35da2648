"""Time-optimal point-mass planning through gate sequences.

Per axis, the minimum-time double integrator with acceleration and velocity
bounds has a closed-form bang-singular-bang solution: full effort, an
optional cruise at the velocity limit, then full opposite effort (or the
mirrored ordering). Multi-waypoint planning samples candidate velocities in
a cone at each gate, scores edges by the synchronized three-axis duration,
and extracts the best chain with a shortest-path pass over the layered
graph. Axes faster than the slowest one are re-solved with scaled
acceleration bounds so all three share the same duration.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

_EPS = 1e-9


class PmmInfeasibleError(RuntimeError):
    pass


@dataclass
class PmmConfig:
    u_max: float = 20.0            # symmetric per-axis acceleration bound [m/s^2]
    v_max: float = 18.0            # symmetric per-axis velocity bound [m/s]
    gate_horizon: int = 3
    samples_per_gate: int = 150
    speed_range: tuple = (3.0, 18.0)
    cone_half_angle: float = np.deg2rad(30.0)
    prune_factor: float = 3.0
    sample_dt: float = 0.01

    def __post_init__(self):
        if not (0.0 < self.cone_half_angle <= np.pi / 2):
            raise ValueError("cone half angle must be in (0, pi/2]")
        if self.gate_horizon < 1 or self.samples_per_gate < 1:
            raise ValueError("gate horizon and sample count must be >= 1")


def _ordering_times(dp, v0, v1, a1, a2, v_cap):
    """Durations for one bang ordering (a1 then a2, cruise capped at v_cap).

    Vectorized over broadcastable inputs (a1/a2/v_cap may be arrays too);
    infeasible entries come back inf. Also returns the switch times and
    cruise velocity for reconstruction.
    """
    dp = np.asarray(dp, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    v1 = np.asarray(v1, dtype=float)
    a1 = np.asarray(a1, dtype=float)
    a2 = np.asarray(a2, dtype=float)
    v0_sq = v0 * v0
    v1_sq = v1 * v1
    vp_sq = (2.0 * a1 * a2 * dp + a2 * v0_sq - a1 * v1_sq) / (a2 - a1)
    has_root = vp_sq >= -1e-10
    root = np.sqrt(np.maximum(vp_sq, 0.0))

    first_high = a1 > 0
    lo_ok = np.maximum(v0, v1) - 1e-9
    hi_ok = np.minimum(v0, v1) + 1e-9
    # accelerate first: peak at or above both; decelerate first: mirrored
    vp_hi = np.where(-root >= lo_ok, -root, root)
    vp_lo = np.where(root <= hi_ok, root, -root)
    vp = np.where(first_high, vp_hi, vp_lo)
    valid = has_root & np.where(first_high, vp >= lo_ok, vp <= hi_ok)
    clamp = np.where(first_high, vp > v_cap, vp < v_cap)

    vc = np.where(clamp, v_cap, vp)
    vc_sq = vc * vc
    t_a = (vc - v0) / a1
    t_b = (v1 - vc) / a2
    with np.errstate(divide="ignore", invalid="ignore"):
        d_bangs = (vc_sq - v0_sq) / (2.0 * a1) + (v1_sq - vc_sq) / (2.0 * a2)
        t_cruise = np.where(clamp, (dp - d_bangs) / np.where(vc == 0.0, np.nan, vc), 0.0)
    t_cruise = np.where(np.isnan(t_cruise), -1.0, t_cruise)
    t_cruise = np.where((t_cruise < 0.0) & (t_cruise > -1e-9), 0.0, t_cruise)

    valid &= (t_a >= -1e-9) & (t_b >= -1e-9) & (t_cruise >= 0.0)
    total = np.where(valid, np.maximum(t_a, 0.0) + t_cruise + np.maximum(t_b, 0.0), np.inf)
    return total, np.maximum(t_a, 0.0), t_cruise, vc


def axis_min_times(dp, v0, v1, u_lo, u_hi, v_lo, v_hi):
    """Vectorized per-axis minimum durations (both orderings considered)."""
    t_ud = _ordering_times(dp, v0, v1, u_hi, u_lo, v_hi)[0]
    t_du = _ordering_times(dp, v0, v1, u_lo, u_hi, v_lo)[0]
    return np.minimum(t_ud, t_du)


def _ordering_times_scalar(dp, v0, v1, a1, a2, v_cap):
    """Scalar twin of _ordering_times (plain floats: the stretch bisections
    call this thousands of times)."""
    denom = a2 - a1
    vp_sq = (2.0 * a1 * a2 * dp + a2 * v0 * v0 - a1 * v1 * v1) / denom
    if vp_sq < -1e-10:
        return np.inf, 0.0, 0.0, 0.0
    root = np.sqrt(vp_sq) if vp_sq > 0.0 else 0.0
    if a1 > 0:
        lo_ok = max(v0, v1) - 1e-9
        vp = -root if -root >= lo_ok else root
        if vp < lo_ok:
            return np.inf, 0.0, 0.0, 0.0
        clamp = vp > v_cap
    else:
        hi_ok = min(v0, v1) + 1e-9
        vp = root if root <= hi_ok else -root
        if vp > hi_ok:
            return np.inf, 0.0, 0.0, 0.0
        clamp = vp < v_cap
    vc = v_cap if clamp else vp
    t_a = (vc - v0) / a1
    t_b = (v1 - vc) / a2
    if clamp:
        if vc == 0.0:
            return np.inf, 0.0, 0.0, 0.0
        d_bangs = (vc * vc - v0 * v0) / (2.0 * a1) + (v1 * v1 - vc * vc) / (2.0 * a2)
        t_cruise = (dp - d_bangs) / vc
        if -1e-9 < t_cruise < 0.0:
            t_cruise = 0.0
    else:
        t_cruise = 0.0
    if t_a < -1e-9 or t_b < -1e-9 or t_cruise < 0.0:
        return np.inf, 0.0, 0.0, 0.0
    t_a = max(t_a, 0.0)
    t_b = max(t_b, 0.0)
    return t_a + t_cruise + t_b, t_a, t_cruise, vc


def axis_min_time_scalar(dp, v0, v1, u_lo, u_hi, v_lo, v_hi):
    t_ud = _ordering_times_scalar(dp, v0, v1, u_hi, u_lo, v_hi)[0]
    t_du = _ordering_times_scalar(dp, v0, v1, u_lo, u_hi, v_lo)[0]
    return min(t_ud, t_du)


@dataclass
class PmmAxisPrimitive:
    """One axis of a time-optimal point-mass segment."""

    p0: float
    v0: float
    p1: float
    v1: float
    u_bounds: tuple
    v_bounds: tuple
    t1: float            # end of the first bang
    t2: float            # start of the last bang
    total_time: float
    a_first: float
    a_last: float
    v_cruise: float
    starts_high: bool    # True when the first phase uses the upper bound
    alpha: float = 1.0
    fallback: bool = False

    def eval(self, t):
        """Position, velocity, acceleration at time t (clamped to [0, T])."""
        t = np.clip(np.asarray(t, dtype=float), 0.0, self.total_time)
        ta = np.minimum(t, self.t1)
        tb = np.clip(t - self.t1, 0.0, self.t2 - self.t1)
        tc = np.clip(t - self.t2, 0.0, None)
        p = (
            self.p0
            + self.v0 * ta + 0.5 * self.a_first * ta**2
            + self.v_cruise * tb
            + self.v_cruise * tc + 0.5 * self.a_last * tc**2
        )
        v = self.v0 + self.a_first * ta + self.a_last * tc
        a = np.where(t < self.t1, self.a_first, np.where(t < self.t2, 0.0, self.a_last))
        return p, v, a


def _build_primitive(p0, v0, p1, v1, u_lo, u_hi, v_lo, v_hi, alpha=1.0, fallback=False):
    t_ud, ta_ud, tc_ud, vc_ud = _ordering_times_scalar(p1 - p0, v0, v1, u_hi, u_lo, v_hi)
    t_du, ta_du, tc_du, vc_du = _ordering_times_scalar(p1 - p0, v0, v1, u_lo, u_hi, v_lo)
    if np.isinf(t_ud) and np.isinf(t_du):
        raise PmmInfeasibleError("no feasible bang-singular-bang profile")
    if t_ud <= t_du:
        total, ta, tc, vc, a_first, a_last, high = t_ud, ta_ud, tc_ud, vc_ud, u_hi, u_lo, True
    else:
        total, ta, tc, vc, a_first, a_last, high = t_du, ta_du, tc_du, vc_du, u_lo, u_hi, False
    return PmmAxisPrimitive(
        p0=float(p0), v0=float(v0), p1=float(p1), v1=float(v1),
        u_bounds=(u_lo, u_hi), v_bounds=(v_lo, v_hi),
        t1=float(ta), t2=float(ta + tc), total_time=float(total),
        a_first=float(a_first), a_last=float(a_last), v_cruise=float(vc),
        starts_high=high, alpha=alpha, fallback=fallback,
    )


def axis_primitive(p0, v0, p1, v1, u_bounds, v_bounds=None) -> PmmAxisPrimitive:
    """Closed-form minimum-time primitive for one axis.

    u_bounds = (u_lo, u_hi) with u_lo < 0 < u_hi; v_bounds defaults to
    unbounded velocity. Boundary velocities outside v_bounds are rejected.
    """
    u_lo, u_hi = u_bounds
    if not (u_lo < 0.0 < u_hi):
        raise ValueError("need u_lo < 0 < u_hi")
    v_lo, v_hi = v_bounds if v_bounds is not None else (-np.inf, np.inf)
    for v in (v0, v1):
        if v < v_lo - _EPS or v > v_hi + _EPS:
            raise PmmInfeasibleError(f"boundary velocity {v} outside bounds {v_lo, v_hi}")
    return _build_primitive(p0, v0, p1, v1, u_lo, u_hi, v_lo, v_hi)


def _min_time_scaled(p0, v0, p1, v1, u_lo, u_hi, v_lo, v_hi, alpha):
    return axis_min_time_scalar(p1 - p0, v0, v1, alpha * u_lo, alpha * u_hi, v_lo, v_hi)


class DurationGapError(PmmInfeasibleError):
    """The requested duration is unachievable for this axis (the feasible
    durations of a double integrator with fixed boundary velocities form a
    union of intervals; reversals need a minimum position excursion)."""


def _coverage(vc, v0, v1, u_lo, u_hi, t_total):
    """Distance covered by a bang-cruise-bang profile that passes through
    cruise velocity vc; None when it does not fit in t_total."""
    a1 = u_hi if vc >= v0 else u_lo
    a3 = u_hi if v1 >= vc else u_lo
    t1 = (vc - v0) / a1 if vc != v0 else 0.0
    t3 = (v1 - vc) / a3 if v1 != vc else 0.0
    t2 = t_total - t1 - t3
    if t1 < -1e-12 or t3 < -1e-12 or t2 < -1e-9:
        return None
    t2 = max(t2, 0.0)
    d = 0.0
    if t1 > 0:
        d += (vc**2 - v0**2) / (2.0 * a1)
    d += vc * t2
    if t3 > 0:
        d += (v1**2 - vc**2) / (2.0 * a3)
    return d, t1, t2, a1, a3


def _coverage_range(v0, v1, u_lo, u_hi, v_lo, v_hi, t_total):
    """Min/max reachable displacement at exactly t_total (with the cruise
    velocities that attain them)."""
    # largest cruise velocity still fitting: peak family t2 = 0
    denom = 1.0 / u_hi - 1.0 / u_lo
    vc_peak = (t_total + v0 / u_hi - v1 / u_lo) / denom
    vc_hi_lim = min(v_hi, max(vc_peak, max(v0, v1)))
    denom2 = 1.0 / u_lo - 1.0 / u_hi
    vc_valley = (t_total + v0 / u_lo - v1 / u_hi) / denom2
    vc_lo_lim = max(v_lo, min(vc_valley, min(v0, v1)))
    top = _coverage(vc_hi_lim, v0, v1, u_lo, u_hi, t_total)
    bot = _coverage(vc_lo_lim, v0, v1, u_lo, u_hi, t_total)
    if top is None or bot is None:
        raise DurationGapError("duration below the axis minimum time")
    return bot[0], top[0], vc_lo_lim, vc_hi_lim


def _fixed_time_axis(p0, v0, p1, v1, u_lo, u_hi, v_lo, v_hi, t_total):
    """Exact fixed-duration axis profile: bang-cruise-bang solved for the
    cruise velocity (coverage is monotone in it). Raises DurationGapError
    when t_total falls in an unachievable duration gap."""
    dp = p1 - p0
    d_min, d_max, vc_lo, vc_hi = _coverage_range(v0, v1, u_lo, u_hi, v_lo, v_hi, t_total)
    if dp > d_max + 1e-9 or dp < d_min - 1e-9:
        raise DurationGapError(f"displacement {dp:.4g} outside reachable "
                               f"[{d_min:.4g}, {d_max:.4g}] at T={t_total:.4g}")
    lo, hi = vc_lo, vc_hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        cov = _coverage(mid, v0, v1, u_lo, u_hi, t_total)
        if cov is None:
            # numerical edge: shrink toward the valid side
            hi = mid if mid > 0.5 * (vc_lo + vc_hi) else hi
            lo = lo if mid > 0.5 * (vc_lo + vc_hi) else mid
            continue
        if cov[0] < dp:
            lo = mid
        else:
            hi = mid
        if abs(cov[0] - dp) < 1e-10 or hi - lo < 1e-15:
            break
    vc = 0.5 * (lo + hi)
    cov = _coverage(vc, v0, v1, u_lo, u_hi, t_total)
    if cov is None or abs(cov[0] - dp) > 1e-6:
        raise PmmInfeasibleError("fixed-duration profile did not converge")
    _, t1, t2, a1, a3 = cov
    return PmmAxisPrimitive(
        p0=float(p0), v0=float(v0), p1=float(p1), v1=float(v1),
        u_bounds=(u_lo, u_hi), v_bounds=(v_lo, v_hi),
        t1=float(t1), t2=float(t1 + t2), total_time=float(t_total),
        a_first=float(a1 if t1 > 0 else 0.0), a_last=float(a3),
        v_cruise=float(vc), starts_high=bool(vc >= v0),
        alpha=np.nan, fallback=True,
    )


def achievable_duration(p0, v0, p1, v1, u_lo, u_hi, v_lo, v_hi, t_from):
    """Smallest duration >= t_from whose displacement range covers p1 - p0."""
    dp = p1 - p0

    def covered(t):
        try:
            d_min, d_max, _, _ = _coverage_range(v0, v1, u_lo, u_hi, v_lo, v_hi, t)
        except DurationGapError:
            return False
        return d_min - 1e-9 <= dp <= d_max + 1e-9

    if covered(t_from):
        return t_from
    hi = max(t_from, 1e-6)
    for _ in range(80):
        hi *= 1.5
        if covered(hi):
            break
    else:
        raise PmmInfeasibleError("no achievable duration found")
    lo = t_from
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if covered(mid):
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-12:
            break
    return hi


def stretch_axis(p0, v0, p1, v1, u_bounds, v_bounds, t_total, tol=1e-6) -> PmmAxisPrimitive:
    """Re-solve one axis so its duration equals t_total.

    The acceleration bounds are scaled by alpha in [0, 1], found by bisection
    on the (weakly monotone) scaled minimum time. Corner cases that defeat
    the bisection fall back to a direct fixed-time profile, flagged.
    """
    u_lo, u_hi = u_bounds
    v_lo, v_hi = v_bounds if v_bounds is not None else (-np.inf, np.inf)
    dp = p1 - p0

    if abs(dp) < _EPS and abs(v0) < _EPS and abs(v1) < _EPS:
        # axis at rest: any duration works with zero effort
        return PmmAxisPrimitive(
            p0=float(p0), v0=0.0, p1=float(p1), v1=0.0,
            u_bounds=u_bounds, v_bounds=(v_lo, v_hi),
            t1=0.0, t2=t_total, total_time=float(t_total),
            a_first=0.0, a_last=0.0, v_cruise=0.0, starts_high=True, alpha=0.0,
        )
    if abs(v0 - v1) < _EPS and abs(dp - v0 * t_total) < 1e-9:
        return PmmAxisPrimitive(
            p0=float(p0), v0=float(v0), p1=float(p1), v1=float(v1),
            u_bounds=u_bounds, v_bounds=(v_lo, v_hi),
            t1=0.0, t2=t_total, total_time=float(t_total),
            a_first=0.0, a_last=0.0, v_cruise=float(v0), starts_high=True, alpha=0.0,
        )

    t_full = _min_time_scaled(p0, v0, p1, v1, u_lo, u_hi, v_lo, v_hi, 1.0)
    if abs(t_full - t_total) <= tol:
        return _build_primitive(p0, v0, p1, v1, u_lo, u_hi, v_lo, v_hi, alpha=1.0)
    if t_full > t_total + tol:
        raise PmmInfeasibleError("target duration below the axis minimum time")

    alpha_hi = 1.0
    alpha_lo = 0.5
    for _ in range(80):
        t_lo = _min_time_scaled(p0, v0, p1, v1, u_lo, u_hi, v_lo, v_hi, alpha_lo)
        if t_lo >= t_total or np.isinf(t_lo):
            break
        alpha_hi = alpha_lo
        alpha_lo *= 0.5
    else:
        return _fixed_time_axis(p0, v0, p1, v1, u_lo, u_hi, v_lo, v_hi, t_total)

    best = (np.inf, None)
    for _ in range(200):
        mid = 0.5 * (alpha_lo + alpha_hi)
        t_mid = _min_time_scaled(p0, v0, p1, v1, u_lo, u_hi, v_lo, v_hi, mid)
        err = abs(t_mid - t_total)
        if err < best[0]:
            best = (err, mid)
        if err <= 1e-11 or alpha_hi - alpha_lo < 1e-16:
            break
        if np.isinf(t_mid) or t_mid > t_total:
            alpha_lo = mid
        else:
            alpha_hi = mid
    if best[1] is not None and best[0] <= tol:
        a = best[1]
        return _build_primitive(p0, v0, p1, v1, a * u_lo, a * u_hi, v_lo, v_hi, alpha=a)
    return _fixed_time_axis(p0, v0, p1, v1, u_lo, u_hi, v_lo, v_hi, t_total)


@dataclass
class SyncedPrimitive:
    """Three synchronized axis primitives sharing one duration."""

    axes: list
    total_time: float

    def sample(self, dt):
        n = max(int(np.ceil(self.total_time / dt)), 1)
        t = np.linspace(0.0, self.total_time, n + 1)
        pos = np.empty((len(t), 3))
        vel = np.empty((len(t), 3))
        for i, ax in enumerate(self.axes):
            pos[:, i], vel[:, i], _ = ax.eval(t)
        return t, pos, vel


def synchronize_axes(primitives, u_bounds, v_bounds=None, tol=1e-6) -> SyncedPrimitive:
    """Slow the faster axes so all three match the largest duration.

    Boundary velocities occasionally make a target duration unachievable for
    one axis (reversals need a minimum excursion); the common duration is
    then bumped to the smallest jointly achievable one.
    """
    u_lo, u_hi = u_bounds
    v_lo, v_hi = v_bounds if v_bounds is not None else (-np.inf, np.inf)
    t_total = max(p.total_time for p in primitives)
    for _ in range(6):
        bumped = t_total
        for prim in primitives:
            bumped = max(bumped, achievable_duration(
                prim.p0, prim.v0, prim.p1, prim.v1, u_lo, u_hi, v_lo, v_hi, t_total
            ))
        if bumped <= t_total + 1e-12:
            break
        t_total = bumped

    axes = []
    for prim in primitives:
        if abs(prim.total_time - t_total) <= tol:
            axes.append(prim)
        else:
            axes.append(
                stretch_axis(
                    prim.p0, prim.v0, prim.p1, prim.v1,
                    u_bounds, v_bounds, t_total, tol=tol,
                )
            )
    return SyncedPrimitive(axes=axes, total_time=t_total)


def point_to_point(p0, v0, p1, v1, cfg: PmmConfig) -> SyncedPrimitive:
    """Synchronized three-axis minimum-time segment between two states."""
    u_bounds = (-cfg.u_max, cfg.u_max)
    v_bounds = (-cfg.v_max, cfg.v_max)
    prims = [
        axis_primitive(p0[i], v0[i], p1[i], v1[i], u_bounds, v_bounds) for i in range(3)
    ]
    return synchronize_axes(prims, u_bounds, v_bounds)


def sample_gate_velocities(gate, m, speed_range, cone_half_angle, rng) -> np.ndarray:
    """m random velocities in a cone around the gate exit direction.

    Directions are uniform on the spherical cap, magnitudes uniform in
    speed_range; the i-th sample depends only on the i-th generator draw, so
    sample sets are nested in m for a fixed generator state.
    """
    axis = gate.exit_direction
    # orthonormal frame around the cone axis
    helper = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    b1 = np.cross(axis, helper)
    b1 /= np.linalg.norm(b1)
    b2 = np.cross(axis, b1)

    draws = rng.random((m, 3))
    cos_t = 1.0 - draws[:, 0] * (1.0 - np.cos(cone_half_angle))
    sin_t = np.sqrt(np.clip(1.0 - cos_t**2, 0.0, None))
    az = 2.0 * np.pi * draws[:, 1]
    speed = speed_range[0] + (speed_range[1] - speed_range[0]) * draws[:, 2]
    dirs = (
        cos_t[:, None] * axis
        + (sin_t * np.cos(az))[:, None] * b1
        + (sin_t * np.sin(az))[:, None] * b2
    )
    return speed[:, None] * dirs


@dataclass
class WindowPlan:
    """Shortest-path result through one gate window."""

    segments: list            # SyncedPrimitive per hop
    velocities: np.ndarray    # chosen velocity at each gate in the window
    total_time: float


def _edge_costs(p0, v0_nodes, p1, v1_nodes, cfg: PmmConfig):
    """Synchronized durations between every node pair of adjacent layers.

    The common duration is the max of the per-axis minimum times (slowing
    the quicker axes never extends the slowest one); all three axes are
    evaluated in one broadcasted batch.
    """
    dp = (p1 - p0)[:, None, None]
    va = v0_nodes.T[:, :, None]
    vb = v1_nodes.T[:, None, :]
    t_ud = _ordering_times(dp, va, vb, cfg.u_max, -cfg.u_max, cfg.v_max)[0]
    t_du = _ordering_times(dp, va, vb, -cfg.u_max, cfg.u_max, -cfg.v_max)[0]
    return np.minimum(t_ud, t_du).max(axis=0)


def _prune_threshold(dist, cfg: PmmConfig):
    v_top = cfg.speed_range[1]
    # distance/v_top alone would cut optimal low-speed edges on short hops,
    # so allow for one acceleration ramp on top of the cruise time
    return cfg.prune_factor * (dist / v_top + v_top / cfg.u_max)


def _sampled_layer(gate, cfg, seed):
    return sample_gate_velocities(
        gate, cfg.samples_per_gate, cfg.speed_range, cfg.cone_half_angle,
        np.random.default_rng(np.random.SeedSequence(entropy=seed)),
    )


def plan_window(gates, start_p, start_v, cfg: PmmConfig, node_seeds,
                edge_cache=None) -> WindowPlan:
    """Layered shortest path through the given gates (relaxed in topological
    order, which on this per-layer DAG matches Dijkstra's result exactly).

    node_seeds carries one entropy tuple per gate; generators are re-created
    here so a gate's candidate set depends only on its seed, not on how many
    windows have sampled it before. Gate-to-gate edge matrices depend only
    on the seeds too, so receding callers pass edge_cache to reuse them
    across overlapping windows.
    """
    layers_v = [_sampled_layer(g, cfg, seed) for g, seed in zip(gates, node_seeds)]
    layer_pos = [np.asarray(g.position, dtype=float) for g in gates]

    def pruned_edges(p_a, v_a, p_b, v_b):
        edges = _edge_costs(p_a, v_a, p_b, v_b, cfg)
        thresh = _prune_threshold(np.linalg.norm(p_b - p_a), cfg)
        pruned = np.where(edges <= thresh, edges, np.inf)
        return pruned if np.isfinite(pruned.min()) else edges

    cost = np.zeros(1)
    parents = []
    prev_p = np.asarray(start_p, dtype=float)
    prev_v = np.asarray(start_v, dtype=float)[None, :]
    for j, (gp, gv) in enumerate(zip(layer_pos, layers_v)):
        if j == 0 or edge_cache is None:
            edges = pruned_edges(prev_p, prev_v, gp, gv)
        else:
            key = (node_seeds[j - 1], node_seeds[j])
            if key not in edge_cache:
                edge_cache[key] = pruned_edges(prev_p, prev_v, gp, gv)
            edges = edge_cache[key]
        through = cost[:, None] + edges
        cost = through.min(axis=0)
        parents.append(through.argmin(axis=0))
        if not np.isfinite(cost.min()):
            raise PmmInfeasibleError(f"no feasible edge into gate {j} of the window")
        prev_p = gp
        prev_v = gv

    node = int(np.argmin(cost))
    chain = [node]
    for parent in reversed(parents[1:]):
        node = int(parent[node])
        chain.append(node)
    chain.reverse()

    velocities = np.array([layers_v[j][chain[j]] for j in range(len(gates))])
    segments = []
    p_cur, v_cur = np.asarray(start_p, dtype=float), np.asarray(start_v, dtype=float)
    for j in range(len(gates)):
        seg = point_to_point(p_cur, v_cur, layer_pos[j], velocities[j], cfg)
        segments.append(seg)
        p_cur, v_cur = layer_pos[j], velocities[j]
    return WindowPlan(segments=segments, velocities=velocities,
                      total_time=float(sum(s.total_time for s in segments)))


@dataclass
class PlanResult:
    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    total_time: float
    segment_times: list
    wall_ms_per_window: list = field(default_factory=list)

    @property
    def wall_ms_median(self):
        return float(np.median(self.wall_ms_per_window)) if self.wall_ms_per_window else 0.0


def plan(track, start_p, start_v, cfg: PmmConfig, seed: int, laps=None) -> PlanResult:
    """Receding-horizon plan through the whole gate sequence.

    Each window spans the next `cfg.gate_horizon` gates; only the first
    segment of a window is committed before replanning from its end state.
    Velocity candidates per sequence position depend only on (seed,
    position), so plans with different horizons draw identical sample sets.
    """
    seq = track.gate_sequence(laps)
    gates = [track.gates[i] for i in seq]
    node_seeds = [(int(seed), pos) for pos in range(len(seq))]

    p_cur = np.asarray(start_p, dtype=float)
    v_cur = np.asarray(start_v, dtype=float)
    t_parts, p_parts, v_parts = [], [], []
    seg_times = []
    wall_ms = []
    edge_cache = {}
    t_offset = 0.0
    for i in range(len(gates)):
        window = gates[i : i + cfg.gate_horizon]
        tic = time.perf_counter()
        win_plan = plan_window(window, p_cur, v_cur, cfg,
                               node_seeds[i : i + cfg.gate_horizon], edge_cache)
        wall_ms.append(1e3 * (time.perf_counter() - tic))
        seg = win_plan.segments[0]
        ts, ps, vs = seg.sample(cfg.sample_dt)
        t_parts.append(ts + t_offset)
        p_parts.append(ps)
        v_parts.append(vs)
        t_offset += seg.total_time
        seg_times.append(seg.total_time)
        p_cur = np.asarray(window[0].position, dtype=float)
        v_cur = win_plan.velocities[0]

    times = np.concatenate([part if i == 0 else part[1:] for i, part in enumerate(t_parts)])
    pos = np.concatenate([part if i == 0 else part[1:] for i, part in enumerate(p_parts)])
    vel = np.concatenate([part if i == 0 else part[1:] for i, part in enumerate(v_parts)])
    return PlanResult(
        times=times, positions=pos, velocities=vel,
        total_time=float(t_offset), segment_times=seg_times,
        wall_ms_per_window=wall_ms,
    )
