"""Race track description: ordered gates with exit directions and pass radii.

Three fixture tracks ship with the package: a 15 m straight line, a 4-gate
zigzag, and a 7-gate figure-eight. Gate coordinates are repo fixtures, not
survey data from any particular venue.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


@dataclass
class Gate:
    position: np.ndarray
    exit_direction: np.ndarray
    pass_radius: float

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.exit_direction = np.asarray(self.exit_direction, dtype=float)
        n = np.linalg.norm(self.exit_direction)
        if n < 1e-9:
            raise ValueError("gate exit direction must be non-zero")
        self.exit_direction = self.exit_direction / n
        if not self.pass_radius > 0:
            raise ValueError("gate pass radius must be positive")


@dataclass
class TrackConfig:
    name: str
    gates: list
    start_position: np.ndarray
    closed: bool = False
    laps: int = 1

    def __post_init__(self):
        self.start_position = np.asarray(self.start_position, dtype=float)
        if len(self.gates) < 1:
            raise ValueError("track needs at least one gate")
        if self.laps < 1:
            raise ValueError("lap count must be >= 1")

    def gate_positions(self) -> np.ndarray:
        return np.array([g.position for g in self.gates])

    def gate_sequence(self, laps: int | None = None):
        """Ordered gate indices for a run: per-lap sequence plus the final
        return through gate 0 on closed tracks."""
        laps = self.laps if laps is None else laps
        if self.closed:
            seq = list(range(len(self.gates))) * laps + [0]
        else:
            seq = list(range(len(self.gates)))
        return seq

    def min_gate_spacing(self) -> float:
        pos = self.gate_positions()
        if len(pos) < 2:
            return np.inf
        dists = [
            np.linalg.norm(pos[i] - pos[j])
            for i in range(len(pos))
            for j in range(i + 1, len(pos))
        ]
        return float(min(dists))

    def to_json(self, path):
        data = {
            "name": self.name,
            "closed": self.closed,
            "laps": self.laps,
            "start_position": self.start_position.tolist(),
            "gates": [
                {
                    "position": g.position.tolist(),
                    "exit_direction": g.exit_direction.tolist(),
                    "pass_radius": g.pass_radius,
                }
                for g in self.gates
            ],
        }
        with open(path, "w") as fh:
            json.dump(data, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_json(cls, path) -> "TrackConfig":
        with open(path) as fh:
            data = json.load(fh)
        gates = [
            Gate(g["position"], g["exit_direction"], g["pass_radius"])
            for g in data["gates"]
        ]
        return cls(
            name=data.get("name", "track"),
            gates=gates,
            start_position=np.asarray(data["start_position"], dtype=float),
            closed=data.get("closed", False),
            laps=data.get("laps", 1),
        )


def straight_track(length: float = 15.0, height: float = 3.0) -> TrackConfig:
    """Single end gate on a straight line: the hover-to-hover benchmark."""
    return TrackConfig(
        name="straight",
        gates=[Gate([length, 0.0, height], [1.0, 0.0, 0.0], 0.5)],
        start_position=[0.0, 0.0, height],
        closed=False,
    )


def zigzag_track() -> TrackConfig:
    """Four laterally alternating gates; exit directions follow the path."""
    centers = np.array(
        [[12.0, 3.0, 3.0], [24.0, -3.0, 3.2], [36.0, 3.0, 3.0], [48.0, -3.0, 3.2]]
    )
    start = np.array([0.0, 0.0, 3.0])
    gates = []
    for i, c in enumerate(centers):
        prev_pt = centers[i - 1] if i > 0 else start
        next_pt = centers[i + 1] if i + 1 < len(centers) else c + (c - prev_pt)
        gates.append(Gate(c, next_pt - prev_pt, 0.5))
    return TrackConfig(name="zigzag", gates=gates, start_position=start, closed=False)


def figure_eight_track(laps: int = 2) -> TrackConfig:
    """Seven gates on a lemniscate; none sits at the self-intersection.

    The lobe tips (the tightest arcs) carry gates so the controller has to
    re-join the path exactly where the curvature peaks.
    """

    def lemniscate(u):
        return np.array([11.0 * np.sin(u), 8.0 * np.sin(u) * np.cos(u), 5.0 + 0.4 * np.sin(u)])

    def tangent(u):
        h = 1e-6
        d = lemniscate(u + h) - lemniscate(u - h)
        return d / np.linalg.norm(d)

    # tips at u = pi/2 and 3pi/2; the remaining gates flank the diagonals,
    # keeping clear of the self-intersection at u = 0 and pi
    us = [0.55, np.pi / 2, np.pi - 0.55,
          np.pi + 0.62, 3 * np.pi / 2 - 0.5, 3 * np.pi / 2 + 0.5, 2 * np.pi - 0.62]
    gates = [Gate(lemniscate(u), tangent(u), 0.3) for u in us]
    start = lemniscate(us[0]) - 1.2 * tangent(us[0])
    return TrackConfig(
        name="figure8", gates=gates, start_position=start, closed=True, laps=laps
    )


FIXTURES = {
    "straight": straight_track,
    "zigzag": zigzag_track,
    "figure8": figure_eight_track,
}


def load_track(spec: str) -> TrackConfig:
    """Resolve a fixture name or a JSON file path to a TrackConfig."""
    if spec in FIXTURES:
        return FIXTURES[spec]()
    return TrackConfig.from_json(spec)
