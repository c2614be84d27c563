"""Scripted expert, demonstration generation, and dataset serialization.

The expert steers by pure pursuit toward a centerline point whose lookahead
distance adapts to the curvature ahead (long on straights, short in tight
turns), shifted laterally to pass traffic. Every simulation step emits one
state-action row; rows are i.i.d. at training time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from ..rng import substream
from .physics import (
    FEATURE_NAMES,
    N_FEATURES,
    STEERING_BOUND_RAD,
    SteeringAction,
    VehicleState,
    heuristic_reference,
    pure_pursuit_delta,
)
from .simulator import Simulation, Track, spawn_traffic, wrap_angle

DEM_COLUMNS = ["scenario"] + FEATURE_NAMES + ["delta_norm"]


@dataclass
class ExpertConfig:
    speed: float = 15.0
    dt: float = 0.05
    wheelbase: float = 2.5
    noise_std_norm: float = 0.01     # seeded noise on delta_norm
    lookahead_min: float = 6.0
    lookahead_max: float = 60.0
    lookahead_base: float = 4.0
    curvature_gain: float = 0.35
    avoid_check_dist: float = 45.0   # react to traffic this far ahead
    avoid_lateral: float = 2.4       # ... within this lateral corridor
    avoid_offset: float = 3.2        # target lateral clearance when passing
    avoid_rate: float = 1.2          # m/s slew on the avoidance offset


@dataclass
class EpisodeInfo:
    track_id: str
    category: str
    steps: int
    truncated: bool   # expert left the track (misconfiguration guard)


class ExpertDriver:
    """Curvature-adaptive pure-pursuit driver with traffic avoidance."""

    def __init__(self, cfg: ExpertConfig, rng: np.random.Generator | None = None):
        self.cfg = cfg
        self.rng = rng
        self.offset = 0.0

    def reset(self):
        self.offset = 0.0

    def _curvature_ahead(self, sim: Simulation) -> float:
        # max segmentwise curvature ahead; endpoint differencing would cancel
        # on S-curves and overshoot alternating dirt turns
        track = sim.track
        step = 5.0
        probes = np.arange(sim.s, sim.s + 45.0 + step, step)
        headings = [track.tangent_angle_at(s) for s in probes]
        kappa = 0.0
        for h0, h1 in zip(headings[:-1], headings[1:]):
            kappa = max(kappa, abs(wrap_angle(h1 - h0)) / step)
        return kappa

    def _avoidance_target(self, sim: Simulation) -> float:
        cfg = self.cfg
        track = sim.track
        best = None
        for veh in sim.traffic:
            ds = veh.s - sim.s
            if track.closed:
                ds %= track.length
            if 0.0 < ds < cfg.avoid_check_dist and \
                    abs(veh.lateral - self.offset) < cfg.avoid_lateral:
                if best is None or ds < best[0]:
                    best = (ds, veh.lateral)
        if best is None:
            return 0.0
        room = track.half_width - 1.5
        _, veh_lat = best
        side = 1.0 if veh_lat <= 0.0 else -1.0  # pass on the freer side
        return float(np.clip(veh_lat + side * cfg.avoid_offset, -room, room))

    def act(self, state: VehicleState, sim: Simulation) -> SteeringAction:
        cfg = self.cfg
        track = sim.track
        kappa = self._curvature_ahead(sim)
        lookahead = float(np.clip(cfg.lookahead_base + cfg.curvature_gain / max(kappa, 0.004),
                                  cfg.lookahead_min, cfg.lookahead_max))
        target_offset = self._avoidance_target(sim)
        max_step = cfg.avoid_rate * cfg.dt
        self.offset += float(np.clip(target_offset - self.offset, -max_step, max_step))
        s_ref = sim.s + lookahead
        ref = track.point_at(s_ref) + track.normal_at(s_ref) * self.offset
        dx, dy = ref[0] - sim.pose.x, ref[1] - sim.pose.y
        theta = wrap_angle(math.atan2(dy, dx) - sim.pose.heading)
        theta = float(np.clip(theta, -math.pi / 2 + 1e-6, math.pi / 2 - 1e-6))
        dist = max(math.hypot(dx, dy), 1.0)
        delta = pure_pursuit_delta(cfg.wheelbase, theta, dist)
        if self.rng is not None and cfg.noise_std_norm > 0:
            delta += float(self.rng.normal(0.0, cfg.noise_std_norm)) * STEERING_BOUND_RAD
        return SteeringAction.from_rad(delta)


def expert_rollout(track: Track, scenario: str, cfg: ExpertConfig, seed: int,
                   episode: int, max_steps: int) -> tuple[list[list], EpisodeInfo]:
    rng = substream(seed, f"expert/{scenario}", episode)
    traffic = []
    if scenario == "traffic":
        n_veh = int(substream(seed, f"nveh/{scenario}", episode).integers(1, 5))
        traffic = spawn_traffic(track, n_veh, seed, episode)
    sim = Simulation(track, speed=cfg.speed, dt=cfg.dt, wheelbase=cfg.wheelbase,
                     traffic=traffic)
    driver = ExpertDriver(cfg, rng)
    rows: list[list] = []
    truncated = False
    for _ in range(max_steps):
        state = sim.observe()
        action = driver.act(state, sim)
        rows.append([scenario] + state.features().tolist() + [action.delta_norm])
        result = sim.step(action)
        if result.off_track:
            truncated = True
            break
        if result.at_end:
            break
    info = EpisodeInfo(track.track_id, track.category, sim.steps, truncated)
    return rows, info


def generate_demonstrations(tracks: list[Track], scenario: str, cfg: ExpertConfig,
                            seed: int, max_steps: int = 4000) -> tuple[pd.DataFrame, list[EpisodeInfo]]:
    """Expert state-action rows over every track in one scenario (D1 or D2)."""
    if scenario not in ("empty", "traffic"):
        raise ValueError("scenario must be 'empty' or 'traffic'")
    all_rows: list[list] = []
    infos: list[EpisodeInfo] = []
    for episode, track in enumerate(tracks):
        rows, info = expert_rollout(track, scenario, cfg, seed, episode, max_steps)
        all_rows.extend(rows)
        infos.append(info)
    frame = pd.DataFrame(all_rows, columns=DEM_COLUMNS)
    return frame, infos


def write_demonstrations(frame: pd.DataFrame, path: str):
    frame.to_csv(path, index=False, float_format="%.12g")


def read_demonstrations(path: str) -> pd.DataFrame:
    frame = pd.read_csv(path)
    missing = [c for c in DEM_COLUMNS if c not in frame.columns]
    if missing:
        raise ValueError(f"demonstration file lacks columns {missing}")
    return frame[DEM_COLUMNS]


@dataclass
class SteeringDataset:
    """Training-ready arrays extracted from a demonstration frame."""

    features: np.ndarray          # (n, 45) raw feature rows
    delta_rad: np.ndarray         # (n,)
    scenario: np.ndarray          # (n,) str
    lookahead_label: np.ndarray = field(init=False)
    heading_label: np.ndarray = field(init=False)
    physics_pred: np.ndarray = field(init=False)

    def __post_init__(self):
        n = len(self.features)
        ranges = self.features[:, 6:25]
        wheelbase = self.features[:, 44]
        look = np.empty(n)
        head = np.empty(n)
        for i in range(n):
            ref = heuristic_reference(ranges[i])
            look[i], head[i] = ref.lookahead, ref.heading
        self.lookahead_label = look
        self.heading_label = head
        self.physics_pred = pure_pursuit_delta(wheelbase, head, look)

    @property
    def empty_mask(self) -> np.ndarray:
        return self.scenario == "empty"


def dataset_from_frame(frame: pd.DataFrame) -> SteeringDataset:
    features = frame[FEATURE_NAMES].to_numpy(dtype=np.float64)
    if features.shape[1] != N_FEATURES:
        raise ValueError("unexpected feature width")
    delta_rad = frame["delta_norm"].to_numpy(dtype=np.float64) * STEERING_BOUND_RAD
    return SteeringDataset(features, delta_rad, frame["scenario"].to_numpy())
