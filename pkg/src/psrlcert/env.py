"""Deterministic lane-world POMDP.

The ego vehicle and a handful of constant-speed vehicles move along parallel
lanes with unit time steps. Observations are two stacked occupancy-intensity
frames rendered around the ego; the supervised targets are the lane, position
and speed of the two nearest visible vehicles.

All functions are pure: a :class:`SemState` fully determines what happens
next, so a state can be copied into a search tree and stepped from there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

ACTIONS = ("LANE_LEFT", "IDLE", "LANE_RIGHT", "FASTER", "SLOWER")
LANE_LEFT, IDLE, LANE_RIGHT, FASTER, SLOWER = range(len(ACTIONS))
N_ACTIONS = len(ACTIONS)
FEATURES_PER_VEHICLE = 3
N_NEAREST = 2


class InvalidAction(ValueError):
    pass


@dataclass(frozen=True)
class Vehicle:
    lane: int
    pos: float
    speed: float


@dataclass(frozen=True)
class SemState:
    ego: Vehicle
    others: tuple[Vehicle, ...]
    scenario: str
    step_count: int = 0
    # set by step() when the ego drove through or into another vehicle
    crashed: bool = False


@dataclass(frozen=True)
class StepOutcome:
    next: SemState
    reward: float
    unsafe: bool


@dataclass(frozen=True)
class ScenarioPreset:
    name: str
    lane_count: int
    window: int  # cells per lane per frame
    other_count: int
    ego_speed_range: tuple[float, float]
    other_speed_range: tuple[float, float]
    horizon: int
    default_feature: float = -1.0
    w_right: float = 0.1
    w_speed: float = 0.5
    high_speed: tuple[float, float] = (20.0, 30.0)
    w_exit: float = 0.0
    exit_steps: int = 0
    cell_length: float = 5.0
    vehicle_length: float = 5.0
    safe_gap: float = 1.0
    speed_step: float = 5.0
    ego_start_speeds: tuple[float, ...] = (20.0, 25.0)
    spawn_range: tuple[float, float] = (12.0, 85.0)
    # None: lanes drawn uniformly; otherwise one lane per other vehicle
    lane_plan: tuple[int, ...] | None = None
    ego_lane: int | None = None
    opposing_lanes: tuple[int, ...] = ()
    recycle_behind: float = 30.0
    recycle_jump: float = 150.0
    # successors() also returns a branch where every other vehicle slows by this much
    brake_jitter: float = 0.0

    @property
    def span(self) -> float:
        return self.window * self.cell_length

    @property
    def back(self) -> float:
        # ego sits 10% into the frame; most of the view is ahead of it
        return -0.1 * self.span

    @property
    def obs_dim(self) -> int:
        return 2 * self.lane_count * self.window

    @property
    def feature_dim(self) -> int:
        return 2 + N_NEAREST * FEATURES_PER_VEHICLE

    @property
    def stochastic(self) -> bool:
        return self.brake_jitter > 0


PRESETS: dict[str, ScenarioPreset] = {}


def register(preset: ScenarioPreset) -> ScenarioPreset:
    PRESETS[preset.name] = preset
    return preset


HIGHWAY = register(ScenarioPreset(
    name="highway", lane_count=3, window=20, other_count=4,
    ego_speed_range=(10.0, 30.0), other_speed_range=(14.0, 20.0), horizon=40,
))
TWOWAY = register(ScenarioPreset(
    name="twoway", lane_count=2, window=30, other_count=5,
    ego_speed_range=(10.0, 30.0), other_speed_range=(14.0, 20.0), horizon=20,
    w_right=0.0, lane_plan=(1, 1, 1, 0, 0), ego_lane=1, opposing_lanes=(0,),
    spawn_range=(12.0, 130.0),
))
EXIT = register(ScenarioPreset(
    name="exit", lane_count=3, window=20, other_count=4,
    ego_speed_range=(10.0, 30.0), other_speed_range=(14.0, 20.0), horizon=15,
    default_feature=0.0, w_exit=1.0, exit_steps=3,
))
STOCHASTIC = register(replace(HIGHWAY, name="stochastic", brake_jitter=2.0))


def preset_of(s: SemState) -> ScenarioPreset:
    return PRESETS[s.scenario]


def get_preset(name: str) -> ScenarioPreset:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; known: {sorted(PRESETS)}") from None


def _min_clearance(preset: ScenarioPreset) -> float:
    return preset.vehicle_length + preset.safe_gap


def reset(preset: ScenarioPreset | str, seed: int) -> SemState:
    """Initial state drawn uniformly without overlap; the ego starts safe."""
    if isinstance(preset, str):
        preset = get_preset(preset)
    rng = np.random.default_rng(seed)
    lane = preset.ego_lane if preset.ego_lane is not None else int(rng.integers(preset.lane_count))
    ego = Vehicle(lane, 0.0, float(rng.choice(preset.ego_start_speeds)))
    clearance = _min_clearance(preset)
    others: list[Vehicle] = []
    for k in range(preset.other_count):
        for _ in range(10_000):
            v_lane = preset.lane_plan[k] if preset.lane_plan else int(rng.integers(preset.lane_count))
            pos = float(rng.uniform(*preset.spawn_range))
            speed = float(rng.uniform(*preset.other_speed_range))
            if v_lane in preset.opposing_lanes:
                speed = -speed
            if all(o.lane != v_lane or abs(o.pos - pos) > clearance for o in others):
                others.append(Vehicle(v_lane, pos, speed))
                break
        else:  # pragma: no cover - spawn range far larger than the vehicles
            raise RuntimeError("could not place vehicles without overlap")
    return SemState(ego, tuple(others), preset.name, 0, False)


def _gap(a: Vehicle, b: Vehicle, length: float) -> float:
    return abs(a.pos - b.pos) - length


def is_unsafe(s: SemState) -> bool:
    """Collision, or a same-lane vehicle less than ``safe_gap`` away."""
    if s.crashed:
        return True
    preset = preset_of(s)
    return any(o.lane == s.ego.lane and _gap(o, s.ego, preset.vehicle_length) < preset.safe_gap
               for o in s.others)


def _reward(preset: ScenarioPreset, s: SemState, unsafe: bool) -> float:
    r = 0.0
    if s.ego.lane == preset.lane_count - 1:
        r += preset.w_right
        if preset.exit_steps and s.step_count > preset.horizon - preset.exit_steps:
            r += preset.w_exit / preset.exit_steps
    lo, hi = preset.high_speed
    if lo <= s.ego.speed <= hi:
        r += preset.w_speed
    if unsafe:
        r -= 1.0
    return r


def _advance(preset: ScenarioPreset, s: SemState, a: int, brake: float = 0.0) -> SemState:
    if a not in range(N_ACTIONS):
        raise InvalidAction(f"action must be one of 0..{N_ACTIONS - 1}, got {a!r}")
    ego = s.ego
    lane, speed = ego.lane, ego.speed
    if a == LANE_LEFT:
        lane = max(lane - 1, 0)
    elif a == LANE_RIGHT:
        lane = min(lane + 1, preset.lane_count - 1)
    elif a == FASTER:
        speed = min(speed + preset.speed_step, preset.ego_speed_range[1])
    elif a == SLOWER:
        speed = max(speed - preset.speed_step, preset.ego_speed_range[0])
    crashed = s.crashed
    new_ego = Vehicle(lane, ego.pos + speed, speed)
    moved = []
    for o in s.others:
        v = o.speed - math.copysign(brake, o.speed) if brake else o.speed
        n = Vehicle(o.lane, o.pos + v, v)
        if o.lane == lane:
            before = o.pos - ego.pos
            after = n.pos - new_ego.pos
            if lane != ego.lane and abs(before) < preset.vehicle_length:
                crashed = True  # changed lanes into an occupied spot
            elif before * after < 0:
                crashed = True  # drove through it within the step
        if n.pos - new_ego.pos < -preset.recycle_behind:
            n = Vehicle(n.lane, n.pos + preset.recycle_jump, n.speed)
        moved.append(n)
    return SemState(new_ego, tuple(moved), s.scenario, s.step_count + 1, crashed)


def step(s: SemState, a: int) -> StepOutcome:
    preset = preset_of(s)
    nxt = _advance(preset, s, a)
    unsafe = is_unsafe(nxt)
    return StepOutcome(nxt, _reward(preset, nxt, unsafe), unsafe)


def successors(s: SemState, a: int) -> list[SemState]:
    """Every state reachable by one transition, in a fixed order."""
    preset = preset_of(s)
    out = [_advance(preset, s, a)]
    if preset.stochastic:
        out.append(_advance(preset, s, a, brake=preset.brake_jitter))
    return out


def _render_frame(preset: ScenarioPreset, ego: Vehicle, vehicles, ego_intensity: float) -> np.ndarray:
    frame = np.zeros((preset.lane_count, preset.window))
    edges = preset.back + preset.cell_length * np.arange(preset.window + 1)
    half = preset.vehicle_length / 2.0

    def paint(lane: int, rel: float, value: float):
        overlap = np.clip(np.minimum(edges[1:], rel + half) - np.maximum(edges[:-1], rel - half),
                          0.0, None) / preset.cell_length
        np.maximum(frame[lane], np.minimum(overlap, 1.0) * value, out=frame[lane])

    for lane, rel in vehicles:
        paint(lane, rel, 1.0)
    paint(ego.lane, 0.0, ego_intensity)
    return frame


def _ego_intensity(preset: ScenarioPreset, speed: float) -> float:
    lo, hi = preset.ego_speed_range
    return 0.5 + 0.5 * (speed - lo) / (hi - lo)


def observe(s: SemState) -> np.ndarray:
    """Previous and current frame, each ``lane_count x window``, flattened.

    The previous frame is reconstructed by running every vehicle backwards
    one step at its current speed, and is centred on the ego's previous
    position. The ego marker's brightness encodes its speed.
    """
    preset = preset_of(s)
    ego = s.ego
    current = [(o.lane, o.pos - ego.pos) for o in s.others]
    previous = [(o.lane, (o.pos - o.speed) - (ego.pos - ego.speed)) for o in s.others]
    marker = _ego_intensity(preset, ego.speed)
    frames = (_render_frame(preset, ego, previous, marker),
              _render_frame(preset, ego, current, marker))
    return np.concatenate([f.ravel() for f in frames])


def _visible(preset: ScenarioPreset, rel: float) -> bool:
    half = preset.vehicle_length / 2.0
    return preset.back - half < rel < preset.back + preset.span + half


def true_features(s: SemState) -> np.ndarray:
    """(relative position, lane, speed) of the two nearest visible vehicles.

    Nearest first, ties broken by lower lane index; empty slots hold the
    preset's default value. Values are normalised to roughly unit scale.
    """
    preset = preset_of(s)
    ego = s.ego
    cands = [(abs(o.pos - ego.pos), o.lane, o) for o in s.others if _visible(preset, o.pos - ego.pos)]
    cands.sort(key=lambda t: (t[0], t[1]))
    feats = np.full(N_NEAREST * FEATURES_PER_VEHICLE, preset.default_feature)
    lanes = max(preset.lane_count - 1, 1)
    vmax = preset.ego_speed_range[1]
    for k, (_, _, o) in enumerate(cands[:N_NEAREST]):
        feats[3 * k: 3 * k + 3] = ((o.pos - ego.pos) / preset.span, o.lane / lanes, o.speed / vmax)
    return feats


def ego_features(s: SemState) -> np.ndarray:
    preset = preset_of(s)
    return np.array([s.ego.lane / max(preset.lane_count - 1, 1),
                     s.ego.speed / preset.ego_speed_range[1]])


def state_features(s: SemState) -> np.ndarray:
    """Input of the Q network: the ego's own lane and speed, then true_features."""
    return np.concatenate([ego_features(s), true_features(s)])


def rollout(s: SemState, choose, steps: int):
    """Run ``choose(state) -> action`` for ``steps`` transitions (stops when unsafe).

    Returns the list of visited states and the list of rewards.
    """
    states, rewards = [s], []
    for _ in range(steps):
        out = step(states[-1], choose(states[-1]))
        states.append(out.next)
        rewards.append(out.reward)
        if out.unsafe:
            break
    return states, rewards
