"""Self-contained 2D track simulator with rangefinder raycasting.

Tracks are arc-length-sampled centerline polylines with a constant half-width;
road and dirt tracks are open x-monotone meanders (heading capped, which rules
out self-intersection), ovals are closed stadium circuits. The car follows the
kinematic bicycle model at constant speed; 19 rays per sweep measure distances
to the track edges and to traffic discs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..rng import stream, substream
from .physics import (
    N_RANGEFINDERS,
    RANGE_MAX,
    SENSOR_ANGLES_RAD,
    SteeringAction,
    VehicleState,
)

TRACK_SPACING = 1.0          # m between centerline samples
HEADING_CAP = 1.2            # rad; keeps open tracks x-monotone
BOUNDARY_MARGIN = 0.5        # m; boundary contact when this close to an edge
DIRT_Z_AMPLITUDE = 1.2       # m; sinusoidal height profile on dirt tracks
DIRT_Z_WAVELENGTH = 90.0     # m


@dataclass
class Pose:
    x: float
    y: float
    heading: float


def wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def step_vehicle(pose: Pose, speed: float, delta_rad: float, dt: float,
                 wheelbase: float) -> Pose:
    """Explicit-Euler kinematic bicycle step."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = pose.x + speed * math.cos(pose.heading) * dt
    y = pose.y + speed * math.sin(pose.heading) * dt
    heading = pose.heading + speed * math.tan(delta_rad) / wheelbase * dt
    if not -math.pi <= heading <= math.pi:  # wrap lazily: zero speed stays exact
        heading = wrap_angle(heading)
    return Pose(x, y, heading)


@dataclass
class Track:
    points: np.ndarray        # (N, 2) centerline, consecutive spacing <= 1 m
    half_width: float
    category: str             # road | dirt | oval
    closed: bool
    track_id: str = ""
    seg_vec: np.ndarray = field(init=False, repr=False)
    seg_len: np.ndarray = field(init=False, repr=False)
    cum_s: np.ndarray = field(init=False, repr=False)
    tangent: np.ndarray = field(init=False, repr=False)
    normal: np.ndarray = field(init=False, repr=False)
    left_edge: np.ndarray = field(init=False, repr=False)
    right_edge: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if self.closed and not np.allclose(pts[0], pts[-1]):
            pts = np.vstack([pts, pts[0]])
        self.points = pts
        self.seg_vec = np.diff(pts, axis=0)
        self.seg_len = np.linalg.norm(self.seg_vec, axis=1)
        if np.any(self.seg_len <= 0):
            raise ValueError("degenerate centerline segment")
        if np.any(self.seg_len > TRACK_SPACING + 1e-6):
            raise ValueError("centerline sample spacing exceeds 1 m")
        self.cum_s = np.concatenate([[0.0], np.cumsum(self.seg_len)])
        self.tangent = self.seg_vec / self.seg_len[:, None]
        # per-point tangents for edge offsetting
        pt_tan = np.vstack([self.tangent[:1], 0.5 * (self.tangent[:-1] + self.tangent[1:]),
                            self.tangent[-1:]])
        pt_tan /= np.linalg.norm(pt_tan, axis=1)[:, None]
        normal = np.stack([-pt_tan[:, 1], pt_tan[:, 0]], axis=1)  # left normal
        self.normal = normal
        self.left_edge = pts + normal * self.half_width
        self.right_edge = pts - normal * self.half_width

    @property
    def length(self) -> float:
        return float(self.cum_s[-1])

    @property
    def n_segments(self) -> int:
        return len(self.seg_len)

    def height(self, s: float) -> float:
        if self.category != "dirt":
            return 0.0
        return DIRT_Z_AMPLITUDE * math.sin(2.0 * math.pi * s / DIRT_Z_WAVELENGTH)

    def height_slope(self, s: float) -> float:
        if self.category != "dirt":
            return 0.0
        k = 2.0 * math.pi / DIRT_Z_WAVELENGTH
        return DIRT_Z_AMPLITUDE * k * math.cos(k * s)

    def wrap_s(self, s: float) -> float:
        return s % self.length if self.closed else min(max(s, 0.0), self.length)

    def point_at(self, s: float) -> np.ndarray:
        s = self.wrap_s(s)
        i = min(int(np.searchsorted(self.cum_s, s, side="right")) - 1,
                self.n_segments - 1)
        i = max(i, 0)
        t = (s - self.cum_s[i]) / self.seg_len[i]
        return self.points[i] + t * self.seg_vec[i]

    def tangent_angle_at(self, s: float) -> float:
        s = self.wrap_s(s)
        i = min(int(np.searchsorted(self.cum_s, s, side="right")) - 1,
                self.n_segments - 1)
        i = max(i, 0)
        return math.atan2(self.tangent[i, 1], self.tangent[i, 0])

    def normal_at(self, s: float) -> np.ndarray:
        a = self.tangent_angle_at(s)
        return np.array([-math.sin(a), math.cos(a)])

    # -- nearest-centerline query ------------------------------------------

    def locate(self, x: float, y: float, hint: int | None = None,
               window: int = 90) -> tuple[int, float, float]:
        """Nearest centerline segment near `hint`: (seg_idx, s, lateral).

        Lateral distance is signed, positive to the left of the tangent.
        """
        p = np.array([x, y])
        n = self.n_segments
        if hint is None:
            idx = np.arange(n)
        elif self.closed:
            idx = (np.arange(hint - window, hint + window + 1)) % n
        else:
            idx = np.arange(max(0, hint - window), min(n, hint + window + 1))
        a = self.points[idx]
        d = self.seg_vec[idx]
        t = np.clip(np.einsum("ij,ij->i", p - a, d) / (self.seg_len[idx] ** 2), 0.0, 1.0)
        proj = a + t[:, None] * d
        dist2 = np.sum((p - proj) ** 2, axis=1)
        k = int(np.argmin(dist2))
        seg = int(idx[k])
        s = float(self.cum_s[seg] + t[k] * self.seg_len[seg])
        tan = self.tangent[seg]
        offs = p - proj[k]
        lateral = float(tan[0] * offs[1] - tan[1] * offs[0])
        return seg, s, lateral


# -- track generation ---------------------------------------------------------

def _sample_arc(start: np.ndarray, heading: float, radius: float, angle: float,
                direction: float) -> tuple[np.ndarray, float]:
    """Polyline along a circular arc; returns points after start and end heading."""
    arc_len = radius * angle
    n = max(int(math.ceil(arc_len / TRACK_SPACING)), 1)
    ds = arc_len / n
    pts = []
    h, p = heading, start.copy()
    for _ in range(n):
        h = h + direction * ds / radius * 0.5
        p = p + ds * np.array([math.cos(h), math.sin(h)])
        h = h + direction * ds / radius * 0.5
        pts.append(p.copy())
    return np.array(pts), h


def _sample_straight(start: np.ndarray, heading: float, length: float) -> np.ndarray:
    n = max(int(math.ceil(length / TRACK_SPACING)), 1)
    ds = length / n
    d = np.array([math.cos(heading), math.sin(heading)])
    return start + ds * np.outer(np.arange(1, n + 1), d)


def generate_track(category: str, seed: int, min_length: float = 2500.0,
                   half_width: float | None = None, track_id: str = "") -> Track:
    rng = stream(seed, f"track/{category}/{track_id}")
    if category == "oval":
        return _generate_oval(rng, half_width, track_id)
    if category == "road":
        radius_range, angle_range, straight_range, alternating = (40.0, 180.0), (0.3, 1.1), (40.0, 150.0), False
        hw = half_width if half_width is not None else float(rng.uniform(5.5, 8.0))
    elif category == "dirt":
        radius_range, angle_range, straight_range, alternating = (15.0, 40.0), (0.5, 1.5), (15.0, 60.0), True
        hw = half_width if half_width is not None else float(rng.uniform(4.0, 5.5))
    else:
        raise ValueError(f"unknown track category {category!r}")

    pts = [np.array([0.0, 0.0])]
    heading = 0.0
    last_dir = 1.0
    total = 0.0
    while total < min_length:
        straight = float(rng.uniform(*straight_range))
        seg = _sample_straight(pts[-1], heading, straight)
        pts.extend(seg)
        total += straight
        radius = float(rng.uniform(*radius_range))
        angle = float(rng.uniform(*angle_range))
        direction = -last_dir if alternating else float(rng.choice([-1.0, 1.0]))
        # keep the running heading inside the cap so x stays monotone
        if abs(heading + direction * angle) > HEADING_CAP:
            direction = -math.copysign(1.0, heading)
            angle = min(angle, HEADING_CAP + abs(heading))
        arc, heading = _sample_arc(pts[-1], heading, radius, angle, direction)
        pts.extend(arc)
        total += radius * angle
        last_dir = direction
    return Track(np.array(pts), hw, category, closed=False, track_id=track_id)


def _generate_oval(rng, half_width, track_id) -> Track:
    hw = half_width if half_width is not None else float(rng.uniform(6.0, 8.0))
    straight = float(rng.uniform(150.0, 350.0))
    radius = float(rng.uniform(35.0, 80.0))
    pts = [np.array([0.0, 0.0])]
    heading = 0.0
    for _ in range(2):
        pts.extend(_sample_straight(pts[-1], heading, straight))
        arc, heading = _sample_arc(pts[-1], heading, radius, math.pi, 1.0)
        pts.extend(arc)
    return Track(np.array(pts), hw, "oval", closed=True, track_id=track_id)


def generate_track_suite(seed: int, n_road: int = 4, n_oval: int = 2,
                         n_dirt: int = 4, min_length: float = 2500.0) -> list[Track]:
    """Deterministic set of tracks; dirt tracks are conventionally test-only."""
    tracks = []
    for i in range(n_road):
        tracks.append(generate_track("road", seed + i, min_length, track_id=f"road{i}"))
    for i in range(n_oval):
        tracks.append(generate_track("oval", seed + 100 + i, min_length, track_id=f"oval{i}"))
    for i in range(n_dirt):
        tracks.append(generate_track("dirt", seed + 200 + i, min_length, track_id=f"dirt{i}"))
    return tracks


# -- raycasting -----------------------------------------------------------------

def _ray_segments_min_t(origin: np.ndarray, dirs: np.ndarray,
                        seg_a: np.ndarray, seg_b: np.ndarray) -> np.ndarray:
    """Min positive ray parameter against each segment set, per ray."""
    e = seg_b - seg_a                                  # (M, 2)
    ao = seg_a - origin                                # (M, 2)
    denom = dirs[:, 0:1] * e[None, :, 1] - dirs[:, 1:2] * e[None, :, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (ao[None, :, 0] * e[None, :, 1] - ao[None, :, 1] * e[None, :, 0]) / denom
        u = (ao[None, :, 0] * dirs[:, 1:2] - ao[None, :, 1] * dirs[:, 0:1]) / denom
    valid = (np.abs(denom) > 1e-12) & (t >= 0.0) & (u >= 0.0) & (u <= 1.0)
    t = np.where(valid, t, np.inf)
    return t.min(axis=1)


def _ray_disc_min_t(origin: np.ndarray, dirs: np.ndarray, center: np.ndarray,
                    radius: float) -> np.ndarray:
    oc = center - origin
    b = dirs @ oc                                     # (19,)
    c = float(oc @ oc) - radius * radius
    disc = b * b - c
    t = np.full(dirs.shape[0], np.inf)
    hit = disc >= 0.0
    sq = np.sqrt(np.maximum(disc, 0.0))
    t1 = b - sq
    t2 = b + sq
    near = np.where(t1 >= 0.0, t1, np.where(t2 >= 0.0, t2, np.inf))
    t[hit] = near[hit]
    return t


@dataclass
class TrafficVehicle:
    s: float
    lateral: float
    speed: float
    radius: float = 1.0

    def position(self, track: Track) -> np.ndarray:
        base = track.point_at(self.s)
        return base + track.normal_at(self.s) * self.lateral


def raycast_sensors(pose: Pose, track: Track, traffic: list[TrafficVehicle] | None = None,
                    hint: int | None = None) -> tuple[np.ndarray, np.ndarray, bool]:
    """19-ray sweeps against track edges (R) and traffic discs (O).

    Returns (R, O, off_track). Outside the corridor the convention is all
    R = 0 with the off-track flag set.
    """
    origin = np.array([pose.x, pose.y])
    seg, s, lateral = track.locate(pose.x, pose.y, hint)
    if abs(lateral) > track.half_width:
        return (np.zeros(N_RANGEFINDERS), np.full(N_RANGEFINDERS, RANGE_MAX), True)
    angles = pose.heading + SENSOR_ANGLES_RAD
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)

    reach = int(RANGE_MAX / TRACK_SPACING) + 10
    n = track.n_segments
    if track.closed:
        idx = (np.arange(seg - reach, seg + reach + 1)) % n
    else:
        idx = np.arange(max(0, seg - reach), min(n, seg + reach + 1))
    seg_a = np.concatenate([track.left_edge[idx], track.right_edge[idx]])
    seg_b = np.concatenate([track.left_edge[idx + 1], track.right_edge[idx + 1]])
    if not track.closed:
        # end caps close the corridor polygon
        caps_a = np.array([track.left_edge[0], track.left_edge[-1]])
        caps_b = np.array([track.right_edge[0], track.right_edge[-1]])
        seg_a = np.concatenate([seg_a, caps_a])
        seg_b = np.concatenate([seg_b, caps_b])
    t_edges = _ray_segments_min_t(origin, dirs, seg_a, seg_b)
    r = np.minimum(t_edges, RANGE_MAX)
    r[~np.isfinite(r)] = RANGE_MAX

    o = np.full(N_RANGEFINDERS, RANGE_MAX)
    for veh in traffic or []:
        t_v = _ray_disc_min_t(origin, dirs, veh.position(track), veh.radius)
        o = np.minimum(o, np.minimum(t_v, RANGE_MAX))
    return r, o, False


# -- simulation ---------------------------------------------------------------

@dataclass
class StepResult:
    off_track: bool
    at_end: bool
    boundary_contact: bool


class Simulation:
    """One car on one track; optional constant-speed traffic discs."""

    def __init__(self, track: Track, speed: float = 15.0, dt: float = 0.05,
                 wheelbase: float = 2.5, start_s: float = 5.0,
                 traffic: list[TrafficVehicle] | None = None):
        self.track = track
        self.speed = speed
        self.dt = dt
        self.wheelbase = wheelbase
        self.traffic = traffic or []
        p = track.point_at(start_s)
        self.pose = Pose(float(p[0]), float(p[1]), track.tangent_angle_at(start_s))
        self.seg_hint, self.s, self.lateral = track.locate(p[0], p[1], None)
        self.steps = 0
        self.distance = 0.0

    def observe(self) -> VehicleState:
        r, o, off = raycast_sensors(self.pose, self.track, self.traffic, self.seg_hint)
        tangent_angle = self.track.tangent_angle_at(self.s)
        alpha = wrap_angle(self.pose.heading - tangent_angle)
        speed_kmh = self.speed * 3.6
        vz = self.track.height_slope(self.s) * self.speed * 3.6
        return VehicleState(
            alpha_axis=alpha,
            d_center=self.lateral / self.track.half_width,
            z=self.track.height(self.s),
            speed=np.array([speed_kmh * math.cos(alpha), speed_kmh * math.sin(alpha), vz]),
            track_ranges=r,
            traffic_ranges=o,
            wheelbase=self.wheelbase,
        )

    def step(self, action: SteeringAction) -> StepResult:
        self.pose = step_vehicle(self.pose, self.speed, action.delta_rad,
                                 self.dt, self.wheelbase)
        self.distance += self.speed * self.dt
        self.steps += 1
        for veh in self.traffic:
            veh.s = self.track.wrap_s(veh.s + veh.speed * self.dt)
        self.seg_hint, self.s, self.lateral = self.track.locate(
            self.pose.x, self.pose.y, self.seg_hint)
        off = abs(self.lateral) > self.track.half_width
        contact = abs(self.lateral) > self.track.half_width - BOUNDARY_MARGIN
        at_end = (not self.track.closed) and self.s >= self.track.length - 20.0
        return StepResult(off_track=off, at_end=at_end, boundary_contact=contact)


def spawn_traffic(track: Track, n: int, seed: int, episode: int,
                  ahead_of: float = 0.0) -> list[TrafficVehicle]:
    rng = substream(seed, "traffic", episode)
    vehicles = []
    for i in range(n):
        s = ahead_of + float(rng.uniform(60.0, 60.0 + 0.8 * track.length))
        lateral = float(rng.uniform(-track.half_width / 2.5, track.half_width / 2.5))
        speed = float(rng.uniform(6.0, 9.0))
        vehicles.append(TrafficVehicle(track.wrap_s(s), lateral, speed))
    return vehicles
