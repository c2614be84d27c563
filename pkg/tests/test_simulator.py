import math

import numpy as np
import pytest

from pernn.steering.data import ExpertConfig, dataset_from_frame, generate_demonstrations
from pernn.steering.evaluate import ExpertPolicy, evaluate_driving, rollout, steering_jerk
from pernn.steering.physics import SteeringAction
from pernn.steering.simulator import (
    Pose,
    Simulation,
    Track,
    TrafficVehicle,
    generate_track,
    raycast_sensors,
    step_vehicle,
)


def straight_track(length=500.0, half_width=5.0) -> Track:
    pts = np.stack([np.arange(0.0, length), np.zeros(int(length))], axis=1)
    return Track(pts, half_width, "road", closed=False, track_id="straight")


# -- step_vehicle ------------------------------------------------------------

def test_step_straight_line():
    pose = Pose(0.0, 0.0, 0.0)
    for _ in range(100):
        pose = step_vehicle(pose, 10.0, 0.0, 0.05, 2.5)
    assert pose.heading == 0.0
    assert pose.y == 0.0
    assert pose.x == pytest.approx(50.0)


def test_step_zero_speed_fixed_point():
    pose = Pose(3.0, 4.0, 0.7)
    nxt = step_vehicle(pose, 0.0, 0.3, 0.05, 2.5)
    assert (nxt.x, nxt.y, nxt.heading) == (3.0, 4.0, 0.7)


def test_step_constant_delta_closes_circle():
    # radius = L / tan(delta); fine dt keeps the Euler orbit within 1%
    wheelbase, delta, speed, dt = 2.5, 0.0997534, 5.0, 0.005
    radius = wheelbase / math.tan(delta)
    pose = Pose(0.0, 0.0, 0.0)
    period = 2 * math.pi * radius / speed
    n = int(round(period / dt))
    for _ in range(n):
        pose = step_vehicle(pose, speed, delta, dt, wheelbase)
    assert math.hypot(pose.x, pose.y) < 0.01 * radius
    # and the orbit radius matches: a quarter period lands ~(r, r)
    pose = Pose(0.0, 0.0, 0.0)
    for _ in range(n // 4):
        pose = step_vehicle(pose, speed, delta, dt, wheelbase)
    assert pose.x == pytest.approx(radius, rel=0.01)
    assert pose.y == pytest.approx(radius, rel=0.01)


# -- raycasting ---------------------------------------------------------------

def test_raycast_perpendicular_rays_on_straight():
    track = straight_track()
    r, o, off = raycast_sensors(Pose(100.0, 0.0, 0.0), track, [])
    assert not off
    assert r[0] == pytest.approx(5.0, abs=1e-9)
    assert r[18] == pytest.approx(5.0, abs=1e-9)
    assert np.all(o == 200.0)


def test_raycast_traffic_disc_dead_ahead():
    track = straight_track()
    veh = TrafficVehicle(s=150.0, lateral=0.0, speed=0.0, radius=1.0)
    r, o, off = raycast_sensors(Pose(100.0, 0.0, 0.0), track, [veh])
    assert o[9] == pytest.approx(49.0, abs=1e-9)


def test_raycast_outside_track_convention():
    track = straight_track()
    r, o, off = raycast_sensors(Pose(100.0, 7.0, 0.0), track, [])
    assert off
    assert np.all(r == 0.0)


def test_raycast_mirror_symmetry():
    track = straight_track()
    r_up, _, _ = raycast_sensors(Pose(100.0, 1.5, 0.3), track, [])
    r_down, _, _ = raycast_sensors(Pose(100.0, -1.5, -0.3), track, [])
    np.testing.assert_allclose(r_up, r_down[::-1], atol=1e-9)


def test_raycast_range_clip():
    track = straight_track(length=900.0)
    r, _, _ = raycast_sensors(Pose(100.0, 0.0, 0.0), track, [])
    assert r[9] == 200.0  # end cap is 800 m away, clipped


# -- track generation -----------------------------------------------------------

@pytest.mark.parametrize("category", ["road", "dirt", "oval"])
def test_generated_track_invariants(category):
    track = generate_track(category, seed=5, min_length=1500.0)
    assert np.all(track.seg_len <= 1.0 + 1e-6)
    assert track.length >= (1500.0 if category != "oval" else 500.0)
    if not track.closed:
        # open meanders stay x-monotone, which rules out self-intersection
        assert np.all(np.diff(track.points[:, 0]) > 0.0)
    else:
        assert np.allclose(track.points[0], track.points[-1])


def test_track_locate_roundtrip():
    track = generate_track("road", seed=9, min_length=1500.0)
    for s in [10.0, 400.0, 1200.0]:
        p = track.point_at(s)
        seg, s_found, lateral = track.locate(p[0], p[1], None)
        assert s_found == pytest.approx(s, abs=1.0)
        assert abs(lateral) < 1e-6


def test_dirt_track_has_height_profile():
    track = generate_track("dirt", seed=3, min_length=1000.0)
    road = generate_track("road", seed=3, min_length=1000.0)
    assert track.height(25.0) != 0.0
    assert road.height(25.0) == 0.0


# -- expert + demonstrations -------------------------------------------------------

def test_expert_completes_max_steps_on_training_track():
    track = generate_track("road", seed=21, min_length=2000.0)
    report = rollout(ExpertPolicy(), track, max_steps=2500)
    assert not report["boundary_contact"]
    assert report["steps"] == 2500


def test_expert_straight_track_near_zero_delta():
    frame, infos = generate_demonstrations(
        [straight_track(800.0)], "empty",
        ExpertConfig(noise_std_norm=0.0), seed=0, max_steps=400)
    assert not infos[0].truncated
    assert np.max(np.abs(frame["delta_norm"].to_numpy())) < 1e-6


def test_demonstrations_seed_deterministic_and_bounded():
    tracks = [generate_track("road", seed=31, min_length=1200.0)]
    a, _ = generate_demonstrations(tracks, "traffic", ExpertConfig(), seed=4, max_steps=500)
    b, _ = generate_demonstrations(tracks, "traffic", ExpertConfig(), seed=4, max_steps=500)
    assert a.equals(b)
    assert np.all(np.abs(a["delta_norm"].to_numpy()) <= 1.0)


def test_demonstration_oval_delta_consistent_with_geometry():
    # noise-free expert on a closed oval: in the arcs, recorded deltas sit
    # near the pure-pursuit value for the measured curvature
    track = generate_track("oval", seed=40, min_length=0.0)
    frame, _ = generate_demonstrations([track], "empty",
                                       ExpertConfig(noise_std_norm=0.0),
                                       seed=0, max_steps=3000)
    deltas = frame["delta_norm"].to_numpy() * 0.366519
    # the largest sustained deltas correspond to the arc radius
    sustained = np.percentile(np.abs(deltas), 90)
    # oval radius r: delta ~ arctan(L / r) at small heading error
    # (exact mapping depends on lookahead; just require the right ballpark)
    assert 0.005 < sustained < 0.2


def test_dataset_from_frame_labels():
    track = straight_track(600.0)
    frame, _ = generate_demonstrations([track], "empty",
                                       ExpertConfig(noise_std_norm=0.0),
                                       seed=0, max_steps=200)
    ds = dataset_from_frame(frame)
    assert ds.features.shape[1] == 45
    assert np.all(ds.lookahead_label > 0)
    assert np.all(np.abs(ds.heading_label) <= math.pi / 2)
    assert np.all(ds.empty_mask)


# -- evaluation --------------------------------------------------------------------

def test_jerk_of_constant_policy_is_zero():
    assert np.all(steering_jerk(np.full(50, 0.123), 0.05) == 0.0)


class ConstantPolicy:
    def __init__(self, delta_norm):
        self.action = SteeringAction.from_norm(delta_norm)

    def reset(self, track):
        pass

    def act(self, state, sim):
        return self.action


def test_constant_delta_exits_straight_track_at_chord():
    # constant delta drives a circle; distance to boundary contact matches
    # the analytic arc length to the point where the circle leaves the lane
    track = straight_track(2000.0, half_width=5.0)
    delta = SteeringAction.from_norm(0.3).delta_rad
    radius = 2.5 / math.tan(delta)
    report = rollout(ConstantPolicy(0.3), track, max_steps=8000, speed=5.0)
    # chord: circle reaches lateral offset (half_width - margin) = 4.5
    offset = 4.5
    arc = radius * math.acos(1.0 - offset / radius)
    assert report["boundary_contact"]
    assert report["distance_m"] == pytest.approx(arc, rel=0.05)
    assert report["avg_abs_jerk"] == 0.0


def test_evaluate_driving_merges_by_track():
    tracks = [straight_track(400.0), straight_track(400.0)]
    report = evaluate_driving(ConstantPolicy(0.0), tracks, max_steps=300)
    assert report["avg_distance_m"] > 0
    assert len(report["per_track"]) == 2
