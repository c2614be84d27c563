"""Driving evaluation: rollout distance before boundary contact, steering jerk."""
from __future__ import annotations

import numpy as np

from ..models import PernnModel
from .physics import SteeringAction, VehicleState
from .simulator import Simulation, Track


def steering_jerk(delta_rad: np.ndarray, dt: float) -> np.ndarray:
    """Third-order central finite difference of the steering sequence."""
    d = np.asarray(delta_rad, dtype=np.float64)
    if d.size < 5:
        return np.zeros(0)
    return (d[4:] - 2.0 * d[3:-1] + 2.0 * d[1:-3] - d[:-4]) / (2.0 * dt ** 3)


class ModelPolicy:
    """Maps a VehicleState to a SteeringAction via a trained model."""

    def __init__(self, model: PernnModel):
        self.model = model

    def reset(self, track: Track):
        pass

    def act(self, state: VehicleState, sim: Simulation) -> SteeringAction:
        extra = {"wheelbase": np.array([[state.wheelbase]])}
        out = self.model.forward_batch(state.features()[None, :], extra)
        return SteeringAction.from_rad(float(out["output"][0, 0]))


class ExpertPolicy:
    """Scripted expert wrapped in the policy interface (no action noise)."""

    def __init__(self, cfg=None):
        from .data import ExpertConfig, ExpertDriver
        self.driver = ExpertDriver(cfg or ExpertConfig(noise_std_norm=0.0))

    def reset(self, track: Track):
        self.driver.reset()

    def act(self, state: VehicleState, sim: Simulation) -> SteeringAction:
        return self.driver.act(state, sim)


def rollout(policy, track: Track, max_steps: int, speed: float = 15.0,
            dt: float = 0.05, wheelbase: float = 2.5) -> dict:
    policy.reset(track)
    sim = Simulation(track, speed=speed, dt=dt, wheelbase=wheelbase)
    deltas: list[float] = []
    contact = False
    while sim.steps < max_steps:
        state = sim.observe()
        action = policy.act(state, sim)
        deltas.append(action.delta_rad)
        result = sim.step(action)
        if result.boundary_contact:
            contact = True
            break
        if result.at_end:
            break
    jerk = steering_jerk(np.array(deltas), dt)
    return {
        "track_id": track.track_id,
        "category": track.category,
        "distance_m": sim.distance,
        "avg_abs_jerk": float(np.mean(np.abs(jerk))) if jerk.size else 0.0,
        "steps": sim.steps,
        "boundary_contact": contact,
    }


def evaluate_driving(policy, tracks: list[Track], max_steps: int = 12000,
                     speed: float = 15.0, dt: float = 0.05,
                     wheelbase: float = 2.5) -> dict:
    """Constant-speed rollouts on each track; averages merged by track order."""
    per_track = [rollout(policy, t, max_steps, speed, dt, wheelbase) for t in tracks]
    return {
        "avg_distance_m": float(np.mean([r["distance_m"] for r in per_track])),
        "avg_abs_jerk": float(np.mean([r["avg_abs_jerk"] for r in per_track])),
        "per_track": per_track,
    }
