"""Closed-loop race simulation: fixed-step loop, measurement delay injection,
gate-pass detection, lap timing, logging, and the solver benchmark.

The loop runs the vehicle dynamics at a fine fixed step with zero-order-hold
thrust commands produced at the (coarser) feedback period; controllers
re-solve on their own cadence inside step(). All randomness is seeded, and
log output excludes wall-clock content from everything except the explicit
timing column, so identical configurations reproduce byte-identical logs.
"""

from __future__ import annotations

import json
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .arc_path import fit_splines, load_timed_csv, resample_equidistant
from .dynamics import IntegrationError, QuadParams, QuadState, integrate_step
from .minsnap import receding_minsnap, sample_segments
from .mpc import MpcController, MpcWeights, TimedReference
from .mpcc import ControllerFault, MpccConfig, MpccController, contour_lag_errors
from .pmm import PmmConfig, plan
from .track import TrackConfig

LOG_COLUMNS = (
    ["t", "px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz",
     "wx", "wy", "wz", "f1", "f2", "f3", "f4", "theta", "v_theta",
     "e_c_norm", "solve_ms"]
)
TIMING_COLUMNS = ("solve_ms",)


@dataclass
class SimOptions:
    sim_dt: float = 0.001
    ctrl_period: float = 0.01
    delay_ms: float = 0.0
    timeout: float = 120.0
    settle_time: float = 2.5
    miss_window: float = 3.0
    miss_abort: float = 3.0
    crash_path_distance: float = 10.0
    seed: int = 0
    laps: int | None = None
    spline_spacing: float = 0.25


class DelayBuffer:
    """Serves the newest state whose timestamp is at most t - delay."""

    def __init__(self, delay: float, t0: float, state0: QuadState):
        self.delay = float(delay)
        self._buf = deque()
        self._buf.append((t0 - self.delay - 1.0, state0.copy()))
        self._buf.append((t0, state0.copy()))

    def push(self, t: float, state: QuadState):
        self._buf.append((t, state.copy()))
        horizon = t - self.delay
        while len(self._buf) > 2 and self._buf[1][0] <= horizon:
            self._buf.popleft()

    def observe(self, t: float):
        cutoff = t - self.delay + 1e-12
        result = None
        for ts, st in self._buf:
            if ts <= cutoff:
                result = (ts, st)
            else:
                break
        return result[0], result[1].copy()


def detect_gate_pass(p0, p1, gate):
    """Crossing of the gate plane along the exit direction between two
    consecutive positions: returns (fraction, lateral distance) or None."""
    n = gate.exit_direction
    s0 = float((np.asarray(p0) - gate.position) @ n)
    s1 = float((np.asarray(p1) - gate.position) @ n)
    if not (s0 < 0.0 <= s1):
        return None
    frac = s0 / (s0 - s1)
    cross = np.asarray(p0) + frac * (np.asarray(p1) - np.asarray(p0))
    offset = cross - gate.position
    lateral = float(np.linalg.norm(offset - (offset @ n) * n))
    return frac, lateral


@dataclass
class SimLog:
    columns: list
    rows: np.ndarray
    events: list
    status: str
    reason: str

    def column(self, name):
        return self.rows[:, self.columns.index(name)]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(",".join(self.columns) + "\n")
            for row in self.rows:
                fh.write(",".join(f"{v:.10g}" for v in row) + "\n")

    def write_events(self, path):
        with open(path, "w") as fh:
            json.dump(self.events, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def to_timed_reference(self, stride: int = 10) -> TimedReference:
        """Subsampled full-state reference for the tracking baseline."""
        rows = self.rows[::stride]
        return TimedReference(rows[:, 0], rows[:, 1:14], rows[:, 14:18])

    def lap_events(self):
        return [e for e in self.events if e["type"] == "lap"]


def lap_times(log: SimLog, track: TrackConfig):
    """Per-lap (duration, valid) extracted from the event stream."""
    laps = log.lap_events()
    if not laps:
        raise ValueError("log contains no completed lap")
    return [(e["duration"], e["valid"]) for e in laps]


def _minsnap_points(track, laps):
    """Receding min-snap reference through the gate sequence.

    The window is extended past the final waypoint (wrap-around gates on
    closed tracks, a short exit-direction stub otherwise) and the extra
    segments dropped, so the free-end tail whip never enters the reference.
    """
    seq = track.gate_sequence(laps)
    waypoints = [track.gates[i].position for i in seq]
    n_keep = len(waypoints)
    if track.closed:
        n_gates = len(track.gates)
        waypoints += [track.gates[(seq[-1] + k) % n_gates].position for k in (1, 2)]
    else:
        last = track.gates[seq[-1]]
        waypoints += [last.position + 2.0 * last.exit_direction]
    segs = receding_minsnap(track.start_position, np.zeros(3), np.zeros(3),
                            np.array(waypoints))[:n_keep]
    return sample_segments(segs), segs


def _mpcc_reference(track, ref, ref_file, params, pmm_cfg, options, laps):
    if ref == "pmm":
        result = plan(track, track.start_position, np.zeros(3), pmm_cfg, options.seed, laps=laps)
        points = result.positions
    elif ref == "minsnap":
        (_, points), _ = _minsnap_points(track, laps)
    elif ref == "file":
        _, points = load_timed_csv(ref_file)
    else:
        raise ValueError(f"unknown reference source: {ref}")
    samples = resample_equidistant(points, options.spline_spacing)
    return fit_splines(samples, closed=False)


def _mpc_reference(track, ref, ref_file, params, pmm_cfg, options, laps) -> TimedReference:
    if ref == "pmm":
        result = plan(track, track.start_position, np.zeros(3), pmm_cfg, options.seed, laps=laps)
        return TimedReference.from_point_trajectory(
            result.times, result.positions, result.velocities, params
        )
    if ref == "minsnap":
        (times, points), _ = _minsnap_points(track, laps)
        vels = np.gradient(points, times, axis=0)
        return TimedReference.from_point_trajectory(times, points, vels, params)
    if ref == "file":
        return TimedReference.from_csv(ref_file)
    raise ValueError(f"unknown reference source: {ref}")


@dataclass
class RaceResult:
    log: SimLog
    summary: dict
    ok: bool


def run_race(
    track: TrackConfig,
    controller: str = "mpcc",
    reference: str = "pmm",
    params: QuadParams | None = None,
    mpcc_cfg: MpccConfig | None = None,
    mpc_weights: MpcWeights | None = None,
    pmm_cfg: PmmConfig | None = None,
    options: SimOptions | None = None,
    ref_file=None,
    mpc_reference: TimedReference | None = None,
    out_dir=None,
) -> RaceResult:
    """Closed-loop run through the track's gate sequence.

    Terminates on completion, timeout, crash (ground hit, non-finite state,
    or leaving the reference by more than the crash distance), a controller
    fault, or an expected-gate miss beyond the abort tolerance.
    """
    params = params or QuadParams()
    mpcc_cfg = mpcc_cfg or MpccConfig()
    pmm_cfg = pmm_cfg or PmmConfig()
    options = options or SimOptions()
    laps = options.laps if options.laps is not None else track.laps

    spline = None
    if controller == "mpcc":
        spline = _mpcc_reference(track, reference, ref_file, params, pmm_cfg, options, laps)
        ctrl = MpccController(spline, track, mpcc_cfg, params)
    elif controller == "mpc":
        timed = mpc_reference or _mpc_reference(
            track, reference, ref_file, params, pmm_cfg, options, laps
        )
        ctrl = MpcController(timed, params, weights=mpc_weights,
                             horizon=mpcc_cfg.horizon, dt=mpcc_cfg.dt)
    else:
        raise ValueError(f"unknown controller: {controller}")

    state = QuadState.hover(track.start_position)
    buffer = DelayBuffer(options.delay_ms / 1e3, 0.0, state)
    seq = track.gate_sequence(laps)
    expected = 0
    events = []
    rows = []
    status, reason = "running", ""
    lap_no = 0
    lap_start_t = None
    lap_clean = True

    thrust = np.full(4, np.clip(params.hover_thrust, params.f_min, params.f_max))
    t = 0.0
    next_ctrl = 0.0
    finish_deadline = None
    n_steps = int(round(options.timeout / options.sim_dt))

    for _ in range(n_steps):
        if t >= next_ctrl - 1e-12:
            _, obs = buffer.observe(t)
            try:
                thrust = ctrl.step(obs, t, options.ctrl_period)
            except (ControllerFault, RuntimeError) as exc:
                status, reason = "fault", str(exc)
                events.append({"type": "fault", "t": round(t, 9), "reason": str(exc)})
                break
            next_ctrl += options.ctrl_period

        prev_p = state.p.copy()
        try:
            state = integrate_step(state, thrust, options.sim_dt, params)
        except IntegrationError as exc:
            status, reason = "crash", str(exc)
            events.append({"type": "crash", "t": round(t, 9), "reason": str(exc)})
            break
        t += options.sim_dt
        buffer.push(t, state)

        if controller == "mpcc":
            theta = ctrl.theta_hat
            v_theta = ctrl.vtheta_hat
            e_c, _ = contour_lag_errors(state.p, theta, spline)
            e_c_norm = float(np.linalg.norm(e_c))
            path_dist = float(np.linalg.norm(state.p - spline.eval(theta)[0]))
            solve_ms = ctrl.last_stats.solve_ms
        else:
            theta = v_theta = e_c_norm = float("nan")
            ref_state, _ = ctrl.ref.interpolate(t)
            path_dist = float(np.linalg.norm(state.p - ref_state[:3]))
            solve_ms = ctrl.last_stats.solve_ms if ctrl.last_stats else 0.0
        rows.append([t, *state.p, *state.q, *state.v, *state.w, *thrust,
                     theta, v_theta, e_c_norm, solve_ms])

        # expected-gate crossing (pass or recorded miss)
        if expected < len(seq):
            gate = track.gates[seq[expected]]
            hit = detect_gate_pass(prev_p, state.p, gate)
            if hit is not None and hit[1] <= options.miss_window:
                frac, lateral = hit
                t_cross = t - options.sim_dt + frac * options.sim_dt
                passed = lateral <= gate.pass_radius
                events.append({
                    "type": "gate_pass" if passed else "gate_miss",
                    "gate": seq[expected], "seq_index": expected,
                    "t": round(t_cross, 9), "miss_distance": round(lateral, 9),
                })
                if not passed:
                    lap_clean = False
                if track.closed and seq[expected] == 0:
                    if lap_start_t is not None:
                        lap_no += 1
                        events.append({
                            "type": "lap", "lap": lap_no,
                            "t_start": round(lap_start_t, 9), "t_end": round(t_cross, 9),
                            "duration": round(t_cross - lap_start_t, 9),
                            "valid": lap_clean and passed,
                        })
                    lap_start_t = t_cross
                    lap_clean = passed
                expected += 1
                if not passed and lateral > options.miss_abort:
                    status, reason = "missed", f"gate {seq[expected - 1]} missed by {lateral:.2f} m"
                    break
                if expected == len(seq):
                    if track.closed:
                        status, reason = "complete", "all laps finished"
                        break
                    finish_deadline = t + options.settle_time

        # out-of-order passes through other gates invalidate the lap
        for gi, g in enumerate(track.gates):
            if expected < len(seq) and gi == seq[expected]:
                continue
            hit = detect_gate_pass(prev_p, state.p, g)
            if hit is not None and hit[1] <= g.pass_radius:
                events.append({
                    "type": "out_of_order", "gate": gi, "t": round(t, 9),
                    "miss_distance": round(hit[1], 9),
                })
                lap_clean = False

        if state.p[2] < 0.0:
            status, reason = "crash", "ground hit"
            events.append({"type": "crash", "t": round(t, 9), "reason": reason})
            break
        if path_dist > options.crash_path_distance:
            status, reason = "crash", f"left the reference by {path_dist:.1f} m"
            events.append({"type": "crash", "t": round(t, 9), "reason": reason})
            break
        if finish_deadline is not None and t >= finish_deadline:
            status, reason = "complete", "all gates passed"
            break
    else:
        if status == "running":
            status, reason = "timeout", f"no finish within {options.timeout} s"
    if status == "running":
        status, reason = ("complete", "all gates passed") if expected == len(seq) else (
            "timeout", "simulation budget exhausted")

    log = SimLog(columns=list(LOG_COLUMNS), rows=np.asarray(rows), events=events,
                 status=status, reason=reason)
    summary = _summarize(log, track, controller, reference, options, laps, seq, expected)
    ok = summary["ok"]
    if out_dir is not None:
        import os

        os.makedirs(out_dir, exist_ok=True)
        log.write_csv(os.path.join(out_dir, "log.csv"))
        log.write_events(os.path.join(out_dir, "events.json"))
        with open(os.path.join(out_dir, "summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return RaceResult(log=log, summary=summary, ok=ok)


def _summarize(log, track, controller, reference, options, laps, seq, expected):
    speeds = np.linalg.norm(log.rows[:, 8:11], axis=1) if len(log.rows) else np.zeros(1)
    passes = [e for e in log.events if e["type"] == "gate_pass"]
    misses = [e for e in log.events if e["type"] == "gate_miss"]
    lap_list = log.lap_events()
    solve_col = log.column("solve_ms") if len(log.rows) else np.zeros(1)
    solve_col = solve_col[solve_col > 0]
    all_passed = len(passes) == len(seq)
    laps_valid = all(e["valid"] for e in lap_list) if track.closed else True
    ok = log.status == "complete" and all_passed and laps_valid
    return {
        "track": track.name,
        "controller": controller,
        "reference": reference,
        "status": log.status,
        "reason": log.reason,
        "ok": bool(ok),
        "laps_requested": laps,
        "lap_times": [e["duration"] for e in lap_list],
        "lap_valid": [e["valid"] for e in lap_list],
        "gates_expected": len(seq),
        "gates_passed": len(passes),
        "gate_misses": len(misses),
        "worst_miss": max((e["miss_distance"] for e in misses), default=0.0),
        "peak_speed": float(speeds.max()),
        "mean_speed": float(speeds.mean()),
        "finish_time": float(log.rows[-1, 0]) if len(log.rows) else 0.0,
        "median_solve_ms": float(np.median(solve_col)) if len(solve_col) else 0.0,
        "seed": options.seed,
        "delay_ms": options.delay_ms,
    }


def bench_solver(
    horizons=(10, 20, 30, 40, 50),
    repetitions: int = 30,
    params: QuadParams | None = None,
    cfg: MpccConfig | None = None,
):
    """Median/percentile wall time per real-time iteration, by horizon.

    A deterministic corpus of states scattered around the zigzag reference
    is replayed through fresh controllers at each horizon for both the
    contouring controller and the tracking baseline.
    """
    from .track import zigzag_track

    params = params or QuadParams()
    base = cfg or MpccConfig()
    track = zigzag_track()
    pmm_cfg = PmmConfig()
    result = plan(track, track.start_position, np.zeros(3), pmm_cfg, seed=1)
    samples = resample_equidistant(result.positions, 0.25)
    spline = fit_splines(samples)

    rng = np.random.default_rng(7)
    thetas = np.linspace(0.5, spline.length - 0.5, 24)
    corpus = []
    for th in thetas:
        pos, tan = spline.eval(float(th))
        p = pos + rng.normal(scale=0.15, size=3)
        v = tan * rng.uniform(2.0, 8.0) + rng.normal(scale=0.2, size=3)
        state = QuadState(p, np.array([1.0, 0.0, 0.0, 0.0]), v, rng.normal(scale=0.1, size=3))
        corpus.append((float(th), state))

    timed_ref = TimedReference.from_point_trajectory(
        result.times, result.positions, result.velocities, params
    )

    table = []
    for n in horizons:
        cfg_n = MpccConfig(
            horizon=int(n), dt=base.dt, q_l=base.q_l, q_nom=base.q_nom,
            q_wp=base.q_wp, sigma=base.sigma, mu=base.mu,
            q_omega=base.q_omega, r_dv=base.r_dv, r_df=base.r_df,
            v_theta_max=base.v_theta_max, dv_theta_max=base.dv_theta_max,
            df_max=base.df_max,
        )
        mpcc_times = []
        ctrl = MpccController(spline, track, cfg_n, params)
        for _ in range(max(repetitions // len(corpus), 1) or 1):
            for th, st in corpus:
                ctrl.theta_hat = th
                ctrl.vtheta_hat = float(np.linalg.norm(st.v))
                ctrl.f_cmd = np.full(4, params.hover_thrust)
                if not ctrl.initialized:
                    ctrl.lin_x[:] = ctrl._assemble(st)
                    ctrl.lin_u[:] = 0.0
                    ctrl.initialized = True
                out = ctrl.rti_step(ctrl._assemble(st))
                mpcc_times.append(out.stats.solve_ms)

        mpc_times = []
        mpc = MpcController(timed_ref, params, horizon=int(n), dt=base.dt)
        for _ in range(max(repetitions // len(corpus), 1) or 1):
            for th, st in corpus:
                _, _, _, stats = mpc.mpc_step(st.as_vector(), np.full(4, params.hover_thrust),
                                              t_now=th / 8.0)
                mpc_times.append(stats.solve_ms)

        table.append({
            "horizon": int(n),
            "mpcc_median_ms": float(np.median(mpcc_times)),
            "mpcc_p90_ms": float(np.percentile(mpcc_times, 90)),
            "mpc_median_ms": float(np.median(mpc_times)),
            "mpc_p90_ms": float(np.percentile(mpc_times, 90)),
            "samples": len(mpcc_times),
        })
    return table
