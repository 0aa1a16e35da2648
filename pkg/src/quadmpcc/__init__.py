"""Quadrotor drone-racing stack built around a contouring controller.

Modules:
    dynamics   rigid-body quadrotor model (rotor thrusts, linear drag, RK4)
    arc_path   arc-length spline paths with unit-tangent evaluation
    pmm        time-optimal point-mass multi-waypoint planner
    minsnap    receding-horizon minimum-snap polynomial references
    qp         dense active-set QP solver with warm starting
    mpcc       progress-maximizing contouring controller (real-time iteration)
    mpc        trajectory-tracking baseline controller
    sim        closed-loop race harness, delay injection, benchmarks
    track      gate sequences and fixture tracks
"""

__version__ = "0.1.0"

from .dynamics import QuadParams, QuadState, RotorThrusts  # noqa: F401
from .track import TrackConfig, load_track  # noqa: F401
