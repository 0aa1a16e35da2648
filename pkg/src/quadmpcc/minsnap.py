"""Receding-horizon minimum-snap polynomial references.

A joint equality-constrained QP fits degree-7 segments through the next few
waypoints, minimizing the integral of squared snap with position
interpolation at every waypoint, continuity of derivatives one through four
at interior joints, a full (position/velocity/acceleration) start condition,
and free end derivatives. In receding use only the first segment is kept
before replanning from its end state. Segment timing is allocated from
waypoint distance at a nominal cruise speed; the downstream controller
reparameterizes by arc length, so timing only affects conditioning.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .qp import QpProblem, solve_qp

_DEG = 7
_NC = _DEG + 1


class MinSnapError(ValueError):
    pass


@dataclass
class PolySegment:
    """Degree-7 segment in normalized time tau = t / duration."""

    coeffs: np.ndarray  # (3, 8) per-axis monomial coefficients in tau
    duration: float

    def eval(self, t, der: int = 0):
        tau = np.clip(t / self.duration, 0.0, 1.0)
        out = np.zeros(3)
        for i in range(der, _NC):
            fac = np.prod(np.arange(i - der + 1, i + 1)) if der else 1.0
            out += fac * self.coeffs[:, i] * tau ** (i - der)
        return out / self.duration**der

    def snap_cost(self) -> float:
        gram = _unit_snap_gram() / self.duration**7
        return float(sum(self.coeffs[ax] @ gram @ self.coeffs[ax] for ax in range(3)))


def _unit_snap_gram() -> np.ndarray:
    g = np.zeros((_NC, _NC))
    for i in range(4, _NC):
        ci = i * (i - 1) * (i - 2) * (i - 3)
        for j in range(4, _NC):
            cj = j * (j - 1) * (j - 2) * (j - 3)
            g[i, j] = ci * cj / (i + j - 7)
    return g


def _basis_row(tau: float, der: int) -> np.ndarray:
    """Row of d^der/dtau^der monomial values at tau."""
    row = np.zeros(_NC)
    for i in range(der, _NC):
        fac = np.prod(np.arange(i - der + 1, i + 1)) if der else 1.0
        row[i] = fac * tau ** (i - der)
    return row


def plan_minsnap(start_p, start_v, start_a, waypoints, durations):
    """Jointly optimal snap-minimizing segments through the waypoints.

    Returns one PolySegment per waypoint. Raises MinSnapError on degenerate
    timing or an unsolvable constraint system.
    """
    waypoints = np.atleast_2d(np.asarray(waypoints, dtype=float))
    durations = np.atleast_1d(np.asarray(durations, dtype=float))
    n_seg = len(waypoints)
    if n_seg < 1:
        raise MinSnapError("need at least one waypoint")
    if len(durations) != n_seg or np.any(durations <= 0):
        raise MinSnapError("need one positive duration per segment")

    nz = n_seg * _NC
    hess = np.zeros((nz, nz))
    gram = _unit_snap_gram()
    for s in range(n_seg):
        sl = slice(s * _NC, (s + 1) * _NC)
        hess[sl, sl] = gram / durations[s] ** 7

    rows, rhs = [], []

    def add(seg, tau, der, value, scale=1.0):
        row = np.zeros(nz)
        row[seg * _NC : (seg + 1) * _NC] = scale * _basis_row(tau, der)
        rows.append(row)
        rhs.append(value)

    start = [np.asarray(start_p, dtype=float), np.asarray(start_v, dtype=float),
             np.asarray(start_a, dtype=float)]
    results = []
    for axis in range(3):
        rows.clear()
        rhs.clear()
        for der in range(3):
            add(0, 0.0, der, start[der][axis], scale=durations[0] ** -der if der else 1.0)
        for s in range(n_seg):
            add(s, 1.0, 0, waypoints[s, axis])
            if s + 1 < n_seg:
                add(s + 1, 0.0, 0, waypoints[s, axis])
                for der in range(1, 5):
                    row = np.zeros(nz)
                    row[s * _NC : (s + 1) * _NC] = _basis_row(1.0, der) / durations[s] ** der
                    row[(s + 1) * _NC : (s + 2) * _NC] = -_basis_row(0.0, der) / durations[s + 1] ** der
                    rows.append(row)
                    rhs.append(0.0)

        sol = solve_qp(
            QpProblem(
                hessian=2.0 * hess,
                gradient=np.zeros(nz),
                lower=None,
                upper=None,
                a_eq=np.array(rows),
                b_eq=np.array(rhs),
            )
        )
        if sol.status != "optimal" or not np.all(np.isfinite(sol.z)):
            raise MinSnapError("snap QP is singular (check waypoints and durations)")
        results.append(sol.z.reshape(n_seg, _NC))

    segments = []
    for s in range(n_seg):
        coeffs = np.stack([results[axis][s] for axis in range(3)])
        segments.append(PolySegment(coeffs=coeffs, duration=float(durations[s])))
    return segments


def allocate_durations(start_p, waypoints, speed: float = 4.0, floor: float = 0.1,
                       entry_speed: float = 0.0):
    """Per-segment timing from waypoint distance at a nominal cruise speed.

    The first hop paces itself to the entry speed when that is faster, and
    gets a ramp allowance when starting slow; without this, replanning with
    a fast inherited start state forces wide snap-optimal loops to burn the
    allotted time.
    """
    pts = np.vstack([np.atleast_2d(start_p), np.atleast_2d(waypoints)])
    dists = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    if np.any(dists < 1e-9):
        raise MinSnapError("coincident consecutive waypoints")
    durations = np.maximum(dists / speed, floor)
    v_eff = max(speed, entry_speed)
    ramp = 0.5 if entry_speed < speed else 0.1
    durations[0] = max(dists[0] / v_eff + ramp, floor)
    return durations


def receding_minsnap(start_p, start_v, start_a, waypoints, horizon: int = 3, speed: float = 4.0):
    """Plan through all waypoints, keeping one segment per replan."""
    waypoints = np.atleast_2d(np.asarray(waypoints, dtype=float))
    kept = []
    p, v, a = (np.asarray(start_p, dtype=float), np.asarray(start_v, dtype=float),
               np.asarray(start_a, dtype=float))
    for i in range(len(waypoints)):
        window = waypoints[i : i + horizon]
        durations = allocate_durations(p, window, speed=speed,
                                       entry_speed=float(np.linalg.norm(v)))
        segs = plan_minsnap(p, v, a, window, durations)
        first = segs[0]
        kept.append(first)
        p = first.eval(first.duration)
        v = first.eval(first.duration, der=1)
        a = first.eval(first.duration, der=2)
    return kept


def sample_segments(segments, dt: float = 0.02):
    """Dense (t, position) samples over a segment chain."""
    ts, ps = [0.0], [segments[0].eval(0.0)]
    offset = 0.0
    for seg in segments:
        n = max(int(np.ceil(seg.duration / dt)), 2)
        local = np.linspace(0.0, seg.duration, n + 1)[1:]
        for t in local:
            ts.append(offset + t)
            ps.append(seg.eval(t))
        offset += seg.duration
    return np.asarray(ts), np.asarray(ps)
