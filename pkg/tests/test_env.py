import pickle
from dataclasses import replace
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from psrlcert import env
from psrlcert.env import FASTER, IDLE, LANE_LEFT, LANE_RIGHT, SLOWER, SemState, Vehicle

HW = env.get_preset("highway")


def make(ego=Vehicle(1, 0.0, 20.0), others=(), scenario="highway", **kw):
    return SemState(ego, tuple(others), scenario, **kw)


def random_states(n, scenario="highway"):
    rng = np.random.default_rng(99)
    out = []
    for i in range(n):
        s = env.reset(scenario, i)
        for _ in range(int(rng.integers(0, 6))):
            nxt = env.step(s, int(rng.integers(env.N_ACTIONS)))
            if nxt.unsafe:
                break
            s = nxt.next
        out.append(s)
    return out


def test_presets_exist():
    assert {"highway", "twoway", "exit"} <= set(env.PRESETS)
    assert [env.get_preset(n).horizon for n in ("highway", "twoway", "exit")] == [40, 20, 15]
    with pytest.raises(KeyError):
        env.get_preset("autobahn")


def test_default_feature_values():
    assert env.get_preset("highway").default_feature == -1
    assert env.get_preset("twoway").default_feature == -1
    assert env.get_preset("exit").default_feature == 0


def test_reset_is_deterministic():
    assert env.reset("highway", 7) == env.reset("highway", 7)
    assert env.reset(HW, 7) == env.reset("highway", 7)


@pytest.mark.parametrize("name", ["highway", "twoway", "exit"])
def test_reset_places_without_overlap(name):
    preset = env.get_preset(name)
    placements = set()
    for seed in range(100):
        s = env.reset(preset, seed)
        assert not env.is_unsafe(s)
        vehicles = (s.ego,) + s.others
        for a, b in combinations(vehicles, 2):
            if a.lane == b.lane:
                assert abs(a.pos - b.pos) - preset.vehicle_length > 1.0
        lo, hi = preset.ego_speed_range
        assert lo <= s.ego.speed <= hi and 0 <= s.ego.lane < preset.lane_count
        placements.add(s.others)
    assert len(placements) == 100


def test_idle_keeps_lane_and_speed():
    s = env.reset("highway", 3)
    out = env.step(s, IDLE)
    assert (out.next.ego.lane, out.next.ego.speed) == (s.ego.lane, s.ego.speed)
    assert out.next.ego.pos == s.ego.pos + s.ego.speed
    for before, after in zip(s.others, out.next.others):
        assert after.speed == before.speed and after.lane == before.lane


def test_action_effects_and_limits():
    s = make(Vehicle(0, 0.0, 30.0))
    assert env.step(s, LANE_LEFT).next.ego.lane == 0
    assert env.step(s, LANE_RIGHT).next.ego.lane == 1
    assert env.step(s, FASTER).next.ego.speed == 30.0
    assert env.step(s, SLOWER).next.ego.speed == 25.0
    slow = make(Vehicle(2, 0.0, 10.0))
    assert env.step(slow, SLOWER).next.ego.speed == 10.0
    assert env.step(slow, LANE_RIGHT).next.ego.lane == 2


@pytest.mark.parametrize("bad", [-1, 5, 17])
def test_invalid_action_rejected(bad):
    with pytest.raises(env.InvalidAction):
        env.step(env.reset("highway", 0), bad)


def test_reward_terms():
    right_fast = env.step(make(Vehicle(2, 0.0, 25.0)), IDLE)
    assert right_fast.reward == pytest.approx(0.6)
    mid_slow = env.step(make(Vehicle(1, 0.0, 15.0)), IDLE)
    assert mid_slow.reward == 0.0
    crash = env.step(make(Vehicle(1, 0.0, 20.0), [Vehicle(1, 12.0, 10.0)]), IDLE)
    assert crash.unsafe and crash.reward == pytest.approx(0.5 - 1.0)


def test_steering_into_occupied_cell_is_unsafe():
    s = make(Vehicle(1, 0.0, 20.0), [Vehicle(2, 14.0, 10.0)])
    out = env.step(s, LANE_RIGHT)
    assert not out.next.crashed
    assert out.unsafe and out.reward < 0


def test_lane_change_into_vehicle_alongside_is_a_crash():
    s = make(Vehicle(1, 0.0, 20.0), [Vehicle(2, 2.0, 10.0)])
    out = env.step(s, LANE_RIGHT)
    assert out.next.crashed and out.unsafe


def test_driving_through_a_vehicle_is_a_crash():
    # ego at 30 jumps past a vehicle 10 ahead going 10 without ever being within one step's snapshot gap
    s = make(Vehicle(1, 0.0, 30.0), [Vehicle(1, 12.0, 10.0)])
    out = env.step(s, IDLE)
    assert out.unsafe


def test_gap_exactly_one_is_safe():
    length = HW.vehicle_length
    assert not env.is_unsafe(make(others=[Vehicle(1, length + 1.0, 20.0)]))
    assert env.is_unsafe(make(others=[Vehicle(1, length + 0.999, 20.0)]))
    assert env.is_unsafe(make(others=[Vehicle(1, 0.0, 20.0)]))


def test_adjacent_lane_is_safe_even_at_zero_gap():
    assert not env.is_unsafe(make(others=[Vehicle(0, 0.0, 20.0), Vehicle(2, 0.0, 20.0)]))


@given(st.floats(0.0, 30.0), st.floats(0.0, 30.0))
def test_safety_monotone_in_gap(g1, g2):
    near, far = sorted((g1, g2))
    length = HW.vehicle_length
    unsafe_far = env.is_unsafe(make(others=[Vehicle(1, length + far, 20.0)]))
    unsafe_near = env.is_unsafe(make(others=[Vehicle(1, length + near, 20.0)]))
    assert unsafe_near or not unsafe_far


def test_step_is_deterministic_and_pure():
    s = env.reset("highway", 11)
    assert env.step(s, FASTER) == env.step(s, FASTER)
    assert env.reset("highway", 11) == s


def test_snapshot_restore_matches():
    s = env.step(env.reset("highway", 4), LANE_LEFT).next
    restored = pickle.loads(pickle.dumps(s))
    assert env.step(restored, FASTER) == env.step(s, FASTER)
    np.testing.assert_array_equal(env.observe(restored), env.observe(s))


def test_replayed_rollout_is_identical():
    def choose(st):
        return int(st.step_count % env.N_ACTIONS)

    a = env.rollout(env.reset("highway", 5), choose, 5)
    b = env.rollout(env.reset("highway", 5), choose, 5)
    assert a == b
    assert len(a[0]) == len(a[1]) + 1


def test_highway_successors_are_singletons():
    s = env.reset("highway", 1)
    for a in range(env.N_ACTIONS):
        assert env.successors(s, a) == [env.step(s, a).next]


def test_stochastic_successors_enumerate_both_outcomes():
    s = env.reset("stochastic", 1)
    outs = env.successors(s, IDLE)
    assert len(outs) == 2 and outs == env.successors(s, IDLE)
    assert outs[0].others != outs[1].others
    assert all(b.speed == pytest.approx(a.speed - 2.0) for a, b in zip(s.others, outs[1].others))


def test_successor_support_finite_in_fuzz():
    rng = np.random.default_rng(0)
    for s in random_states(200, "stochastic") + random_states(200):
        for a in rng.integers(0, env.N_ACTIONS, size=3):
            assert 1 <= len(env.successors(s, int(a))) <= 2


def test_observation_shape_and_range():
    for name in ("highway", "twoway", "exit"):
        preset = env.get_preset(name)
        for s in random_states(300, name):
            o = env.observe(s)
            assert o.shape == (preset.obs_dim,)
            assert o.min() >= 0.0 and o.max() <= 1.0


def test_empty_road_shows_only_the_ego_marker():
    s = make(Vehicle(1, 0.0, 20.0))
    o = env.observe(s).reshape(2, HW.lane_count, HW.window)
    for frame in o:
        assert np.count_nonzero(frame[[0, 2]]) == 0
        marker = frame[1]
        # the ego sits 10% into the frame, straddling cells 1 and 2; brightness encodes speed
        intensity = 0.5 + 0.5 * (20 - 10) / 20
        np.testing.assert_allclose(marker[1:3], [intensity / 2, intensity / 2])
        assert np.count_nonzero(marker) == 2


def test_vehicle_outside_window_is_invisible():
    s1 = make(others=[Vehicle(0, 40.0, 20.0)])
    s2 = make(others=[Vehicle(0, 40.0, 20.0), Vehicle(2, 400.0, 20.0)])
    np.testing.assert_array_equal(env.observe(s1), env.observe(s2))
    np.testing.assert_array_equal(env.true_features(s1), env.true_features(s2))


def test_partial_overlap_is_interpolated():
    # vehicle centred on a cell edge covers half of two cells
    edge = HW.back + 10 * HW.cell_length
    o = env.observe(make(others=[Vehicle(0, edge, 0.0)])).reshape(2, HW.lane_count, HW.window)
    np.testing.assert_allclose(o[1, 0, 9:11], [0.5, 0.5])


def test_previous_frame_reconstructed_from_speeds():
    s = make(Vehicle(1, 0.0, 20.0), [Vehicle(0, 50.0, 10.0)])
    prev = env.observe(s).reshape(2, HW.lane_count, HW.window)[0]
    # relative position one step ago: (50 - 10) - (0 - 20) = 60
    cur_of_prev = env.observe(make(Vehicle(1, 0.0, 20.0), [Vehicle(0, 60.0, 10.0)])).reshape(2, 3, -1)[1]
    np.testing.assert_array_equal(prev, cur_of_prev)


def test_true_features_defaults_when_empty():
    np.testing.assert_array_equal(env.true_features(make()), -np.ones(6))
    np.testing.assert_array_equal(env.true_features(make(scenario="exit")), np.zeros(6))


def test_true_features_single_vehicle():
    f = env.true_features(make(others=[Vehicle(2, 30.0, 15.0)]))
    np.testing.assert_allclose(f, [30.0 / HW.span, 1.0, 0.5, -1, -1, -1])


def _nearest_two_oracle(s):
    preset = env.preset_of(s)
    visible = [o for o in s.others
               if preset.back - 2.5 < o.pos - s.ego.pos < preset.back + preset.span + 2.5]
    best = sorted(visible, key=lambda o: (abs(o.pos - s.ego.pos), o.lane))[:2]
    return [(o.lane, o.pos) for o in best]


def test_true_features_pick_two_nearest_with_lane_tiebreak():
    s = make(others=[Vehicle(2, 20.0, 15.0), Vehicle(0, -8.0, 15.0), Vehicle(1, 40.0, 15.0),
                     Vehicle(0, 20.0, 18.0)])
    f = env.true_features(s)
    # |-8| is nearest, then the two at 20 tie and lane 0 wins
    np.testing.assert_allclose(f[:3], [-8.0 / HW.span, 0.0, 0.5])
    np.testing.assert_allclose(f[3:], [20.0 / HW.span, 0.0, 18.0 / 30.0])
    for st_ in random_states(200):
        got = env.true_features(st_)
        want = _nearest_two_oracle(st_)
        for k, (lane, pos) in enumerate(want):
            assert got[3 * k + 1] == pytest.approx(lane / 2)
            assert got[3 * k] == pytest.approx((pos - st_.ego.pos) / HW.span)


def test_state_features_prepend_ego():
    s = make(Vehicle(2, 0.0, 15.0))
    np.testing.assert_allclose(env.state_features(s)[:2], [1.0, 0.5])
    assert env.state_features(s).shape == (HW.feature_dim,)


def test_vehicles_far_behind_are_recycled_ahead():
    s = make(Vehicle(1, 0.0, 30.0), [Vehicle(0, -25.0, 10.0)])
    nxt = env.step(s, IDLE).next
    assert nxt.others[0].pos == pytest.approx(-15.0 + HW.recycle_jump)


def test_twoway_opposing_lane_moves_backwards():
    s = env.reset("twoway", 0)
    for o in s.others:
        assert (o.speed < 0) == (o.lane == 0)
    assert s.ego.lane == 1


def test_exit_reward_only_near_the_end():
    preset = env.get_preset("exit")
    late = make(Vehicle(2, 0.0, 15.0), scenario="exit", step_count=preset.horizon - 2)
    early = make(Vehicle(2, 0.0, 15.0), scenario="exit", step_count=0)
    assert env.step(late, IDLE).reward > env.step(early, IDLE).reward


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.lists(st.integers(0, 4), min_size=1, max_size=8))
def test_speed_and_lane_stay_in_range(seed, actions):
    s = env.reset("highway", seed)
    for a in actions:
        s = env.step(s, a).next
        assert 0 <= s.ego.lane < HW.lane_count
        assert HW.ego_speed_range[0] <= s.ego.speed <= HW.ego_speed_range[1]


def test_preset_fields_positive():
    for p in env.PRESETS.values():
        assert p.lane_count > 0 and p.window > 0 and p.other_count > 0 and p.horizon > 0
        assert replace(p).obs_dim == 2 * p.lane_count * p.window
