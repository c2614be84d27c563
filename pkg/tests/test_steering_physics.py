import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pernn.autodiff import DomainError
from pernn.steering.physics import (
    N_RANGEFINDERS,
    STEERING_BOUND_RAD,
    SteeringAction,
    VehicleState,
    heuristic_reference,
    pure_pursuit_delta,
)


def brute_force_reference(ranges):
    """Independent scan: first maximal index, angle/lookahead by formula."""
    best_i = 0
    for i in range(1, len(ranges)):
        if ranges[i] > ranges[best_i]:
            best_i = i
    return best_i, math.radians(10 * best_i - 90), ranges[best_i]


def test_delta_zero_heading():
    assert pure_pursuit_delta(2.5, 0.0, 10.0) == 0.0


def test_delta_closed_form_pi_over_4():
    # arctan(2*2.5*sin(pi/6)/2.5) = arctan(1)
    assert pure_pursuit_delta(2.5, math.pi / 6, 2.5) == pytest.approx(math.pi / 4, rel=1e-14)


def test_delta_odd_in_heading():
    rng = np.random.default_rng(0)
    for _ in range(100):
        wheelbase = rng.uniform(1.0, 4.0)
        theta = rng.uniform(-math.pi / 2, math.pi / 2)
        lookahead = rng.uniform(0.5, 200.0)
        assert pure_pursuit_delta(wheelbase, -theta, lookahead) == pytest.approx(
            -pure_pursuit_delta(wheelbase, theta, lookahead), abs=1e-15)


def test_delta_matches_closed_form_on_random_inputs():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        wheelbase = rng.uniform(1.0, 4.0)
        theta = rng.uniform(-math.pi / 2, math.pi / 2)
        lookahead = rng.uniform(0.5, 200.0)
        expected = math.atan(2.0 * wheelbase * math.sin(theta) / lookahead)
        got = pure_pursuit_delta(wheelbase, theta, lookahead)
        assert abs(got - expected) <= 1e-12


def test_delta_rejects_bad_lookahead():
    with pytest.raises(DomainError) as exc:
        pure_pursuit_delta(2.5, 0.1, 0.0)
    assert exc.value.variable == "lookahead"


def test_heuristic_example_straight_ahead():
    ranges = np.full(N_RANGEFINDERS, 50.0)
    ranges[9] = 120.0
    ref = heuristic_reference(ranges)
    assert ref.heading == 0.0
    assert ref.lookahead == 120.0


def test_heuristic_boundary_index_zero():
    ranges = np.linspace(100.0, 10.0, N_RANGEFINDERS)
    ref = heuristic_reference(ranges)
    assert ref.heading == pytest.approx(-math.pi / 2)
    assert ref.lookahead == 100.0


def test_heuristic_all_equal_takes_first():
    ranges = np.full(N_RANGEFINDERS, 200.0)
    ref = heuristic_reference(ranges)
    assert ref.heading == pytest.approx(-math.pi / 2)
    assert ref.lookahead == 200.0


@given(st.lists(st.floats(0.1, 200.0), min_size=N_RANGEFINDERS, max_size=N_RANGEFINDERS))
@settings(max_examples=200, deadline=None)
def test_heuristic_matches_brute_force(ranges):
    ref = heuristic_reference(np.array(ranges))
    i, theta, lookahead = brute_force_reference(ranges)
    assert ref.heading == pytest.approx(theta, abs=1e-15)
    assert ref.lookahead == lookahead


def test_heuristic_tie_cases_first_index():
    rng = np.random.default_rng(3)
    for _ in range(50):
        ranges = rng.uniform(1.0, 150.0, N_RANGEFINDERS)
        ties = rng.choice(N_RANGEFINDERS, size=3, replace=False)
        ranges[ties] = 180.0
        ref = heuristic_reference(ranges)
        i, theta, lookahead = brute_force_reference(list(ranges))
        assert i == min(ties)
        assert ref.heading == pytest.approx(theta, abs=1e-15)


def test_steering_action_conversion_and_clamp():
    a = SteeringAction.from_norm(0.5)
    assert a.delta_rad == pytest.approx(0.5 * STEERING_BOUND_RAD)
    clamped = SteeringAction.from_norm(1.7)
    assert clamped.delta_norm == 1.0
    assert clamped.delta_rad == pytest.approx(STEERING_BOUND_RAD)
    from_rad = SteeringAction.from_rad(-2.0)  # beyond the bound
    assert from_rad.delta_norm == -1.0


def test_vehicle_state_feature_vector_width_and_order():
    state = VehicleState(
        alpha_axis=0.1, d_center=-0.2, z=0.4,
        speed=np.array([54.0, 1.0, 0.0]),
        track_ranges=np.arange(19.0),
        traffic_ranges=np.full(19, 200.0),
        wheelbase=2.5,
    )
    f = state.features()
    assert f.shape == (45,)
    assert f[0] == 0.1 and f[1] == -0.2 and f[2] == 0.4
    assert f[3] == 54.0
    assert f[6] == 0.0 and f[24] == 18.0  # rangefinder block
    assert f[25] == 200.0 and f[43] == 200.0  # traffic block
    assert f[44] == 2.5


def test_vehicle_state_requires_19_sensors():
    with pytest.raises(ValueError):
        VehicleState(0, 0, 0, np.zeros(3), np.zeros(18), np.zeros(19), 2.5)
