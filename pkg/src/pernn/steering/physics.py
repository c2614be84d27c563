"""Pure-pursuit steering geometry and the heuristic reference-point labeler.

The steering law follows from the lookahead-circle construction: curvature to
the reference point is k = 2 sin(theta) / l, and the kinematic bicycle model
(turn radius L / tan(delta)) turns that curvature into a steering angle
delta = arctan(2 L sin(theta) / l).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..autodiff import DomainError, Tape
from ..blocks import PhysicsBlock

#: |delta_norm| = 1 corresponds to this steering angle in radians.
STEERING_BOUND_RAD = 0.366519

N_RANGEFINDERS = 19
RANGE_MAX = 200.0
#: sensor k points at (10k - 90) degrees relative to the car axis.
SENSOR_ANGLES_DEG = np.arange(N_RANGEFINDERS) * 10.0 - 90.0
SENSOR_ANGLES_RAD = np.deg2rad(SENSOR_ANGLES_DEG)


@dataclass
class SteeringAction:
    """Normalized steering in [-1, 1] plus its physical angle."""

    delta_norm: float
    delta_rad: float

    @classmethod
    def from_norm(cls, delta_norm: float) -> "SteeringAction":
        d = float(np.clip(delta_norm, -1.0, 1.0))
        return cls(d, d * STEERING_BOUND_RAD)

    @classmethod
    def from_rad(cls, delta_rad: float) -> "SteeringAction":
        return cls.from_norm(delta_rad / STEERING_BOUND_RAD)


@dataclass
class ReferencePoint:
    """Lookahead distance (m) and heading difference (rad) to a road point."""

    lookahead: float
    heading: float

    def __post_init__(self):
        if not 0.0 < self.lookahead <= RANGE_MAX:
            raise DomainError("lookahead", f"lookahead {self.lookahead} outside (0, {RANGE_MAX}]")
        if not -math.pi / 2 <= self.heading <= math.pi / 2:
            raise DomainError("heading", f"heading {self.heading} outside [-pi/2, pi/2]")


@dataclass
class VehicleState:
    """One observation row: pose-relative scalars plus both rangefinder sweeps."""

    alpha_axis: float        # angle between car direction and track axis, rad
    d_center: float          # signed offset from track axis, normalized to edges
    z: float                 # height of mass centre over track surface, m
    speed: np.ndarray        # (3,) velocity vector, km/h
    track_ranges: np.ndarray   # (19,) distances to track edge, m, clipped to 200
    traffic_ranges: np.ndarray  # (19,) distances to traffic, m, clipped to 200
    wheelbase: float

    def __post_init__(self):
        self.speed = np.asarray(self.speed, dtype=np.float64)
        self.track_ranges = np.asarray(self.track_ranges, dtype=np.float64)
        self.traffic_ranges = np.asarray(self.traffic_ranges, dtype=np.float64)
        if self.track_ranges.shape != (N_RANGEFINDERS,):
            raise ValueError(f"track_ranges must have {N_RANGEFINDERS} entries")
        if self.traffic_ranges.shape != (N_RANGEFINDERS,):
            raise ValueError(f"traffic_ranges must have {N_RANGEFINDERS} entries")

    def features(self) -> np.ndarray:
        """45-feature vector: [alpha, d_center, z, v(3), R(19), O(19), L]."""
        return np.concatenate([
            [self.alpha_axis, self.d_center, self.z],
            self.speed,
            self.track_ranges,
            self.traffic_ranges,
            [self.wheelbase],
        ])


FEATURE_NAMES = (
    ["alpha_axis", "d_center", "z", "vx", "vy", "vz"]
    + [f"r{k:02d}" for k in range(N_RANGEFINDERS)]
    + [f"o{k:02d}" for k in range(N_RANGEFINDERS)]
    + ["wheelbase"]
)
N_FEATURES = len(FEATURE_NAMES)


def pure_pursuit_delta(wheelbase: float, heading: float, lookahead: float) -> float:
    """Steering angle arctan(2 L sin(theta) / l); odd in theta."""
    if np.any(np.asarray(lookahead) <= 0.0):
        raise DomainError("lookahead", "lookahead must be > 0")
    if np.any(np.asarray(wheelbase) <= 0.0):
        raise DomainError("wheelbase", "wheelbase must be > 0")
    return np.arctan(2.0 * wheelbase * np.sin(heading) / lookahead)


def heuristic_reference(track_ranges: np.ndarray) -> ReferencePoint:
    """Reference point toward the farthest rangefinder reading.

    Picks i = argmax over the 19 track rangefinders (first index on ties),
    heading (10 i - 90) degrees, lookahead = the reading itself.
    """
    r = np.asarray(track_ranges, dtype=np.float64)
    if r.shape != (N_RANGEFINDERS,):
        raise ValueError(f"expected {N_RANGEFINDERS} rangefinder values")
    i = int(np.argmax(r))  # argmax returns the first maximal index
    theta = math.radians(10.0 * i - 90.0)
    return ReferencePoint(lookahead=float(r[i]), heading=theta)


class PurePursuitBlock(PhysicsBlock):
    """Fixed-operator fragment computing arctan(2 L sin(theta) / l)."""

    name = "pure_pursuit"
    intermediate_names = ("lookahead", "heading")
    raw_input_names = ("wheelbase",)
    domain = {
        "lookahead": (1e-9, RANGE_MAX),  # strict: ~1/l in the curvature
        "heading": (-math.pi / 2, math.pi / 2),
    }

    def build(self, t: Tape, intermediates: dict[str, int], raws: dict[str, int]) -> int:
        lookahead = intermediates["lookahead"]
        heading = intermediates["heading"]
        wheelbase = raws["wheelbase"]
        numer = t.multiply(t.constant(2.0), t.multiply(wheelbase, t.sin(heading)))
        return t.arctan(t.divide(numer, lookahead))
