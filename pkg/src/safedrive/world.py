"""Three-lane one-way highway with scripted traffic.

Lane 0 is the left lane (smallest ``y``).  Agents are longitudinal point
masses integrated exactly under piecewise-constant acceleration, which is what
makes the envelope-based interval predictions sound.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from safedrive.dynamics import ControlInput, VehicleParams, VehicleState, step

SCENARIO_SCHEMA = 1


class LaneId(enum.IntEnum):
    Left = 0
    Middle = 1
    Right = 2

    @property
    def label(self) -> str:
        return f"{self.name} Lane"


class PolicyMode(str, enum.Enum):
    ConstantSpeed = "ConstantSpeed"
    PiecewiseAccel = "PiecewiseAccel"
    FollowerReactive = "FollowerReactive"


class EnvelopeViolation(RuntimeError):
    """An agent's realized acceleration left its declared envelope."""


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class RoadGeometry:
    lane_width: float = 4.0
    n_lanes: int = 3
    vehicle_width: float = 2.0

    @property
    def y_inf(self) -> float:
        return self.vehicle_width / 2

    @property
    def y_sup(self) -> float:
        return self.n_lanes * self.lane_width - self.vehicle_width / 2

    def center(self, lane: int) -> float:
        return (int(lane) + 0.5) * self.lane_width

    def band(self, lane: int) -> tuple[float, float]:
        """Lateral extent ``[lo, hi)`` of a lane."""
        return int(lane) * self.lane_width, (int(lane) + 1) * self.lane_width

    def boundary(self, a: int, b: int) -> float:
        """The lane line between two adjacent lanes."""
        if abs(int(a) - int(b)) != 1:
            raise ValueError(f"lanes {a} and {b} are not adjacent")
        return max(int(a), int(b)) * self.lane_width


def lane_of(y: float, road: RoadGeometry) -> LaneId:
    k = math.floor(y / road.lane_width)
    return LaneId(min(max(k, 0), road.n_lanes - 1))


def lanes_of_interval(y_lo: float, y_hi: float, half_width: float, road: RoadGeometry) -> set[LaneId]:
    if y_lo > y_hi:
        raise ValueError("y_lo must not exceed y_hi")
    lo = lane_of(y_lo - half_width, road)
    hi = lane_of(y_hi + half_width, road)
    return {LaneId(k) for k in range(lo, hi + 1)}


@dataclass(frozen=True)
class LaneChange:
    start_step: int
    target_lane: LaneId
    lateral_speed: float = 1.0
    # the maneuver is announced this many steps ahead (turn signal);
    # must cover the prediction horizon for containment to hold
    signal_steps: int = 10


@dataclass(frozen=True)
class ScriptedPolicy:
    mode: PolicyMode = PolicyMode.ConstantSpeed
    schedule: tuple[tuple[int, float], ...] = ()
    envelope: tuple[float, float] = (-5.0, 1.5)
    cooperative: bool = True
    cruise_speed: Optional[float] = None
    interaction_range: float = 35.0
    react_decel: float = -2.0
    react_accel: float = 1.5
    lane_change: Optional[LaneChange] = None

    def __post_init__(self):
        lo, hi = self.envelope
        if lo > hi:
            raise ScenarioError(f"bad envelope {self.envelope}")
        for _, acc in self.schedule:
            if not lo <= acc <= hi:
                raise ScenarioError(f"scheduled accel {acc} outside envelope {self.envelope}")
        if self.mode is PolicyMode.FollowerReactive and not (
            lo <= self.react_decel <= 0 <= self.react_accel <= hi
        ):
            raise ScenarioError("reaction magnitudes must lie inside the envelope")

    def scheduled_accel(self, step_index: int) -> float:
        acc = 0.0
        for start, value in self.schedule:
            if start <= step_index:
                acc = value
        return acc


@dataclass(frozen=True)
class Agent:
    id: int
    state: VehicleState
    params: VehicleParams = field(default_factory=VehicleParams)
    policy: ScriptedPolicy = field(default_factory=ScriptedPolicy)
    source_lane: Optional[LaneId] = None

    def lane_change_state(self, step_index: int, road: RoadGeometry) -> str:
        """'none', 'signalling' (announced or in progress) or 'done'."""
        lc = self.policy.lane_change
        if lc is None:
            return "none"
        if abs(self.state.y - road.center(lc.target_lane)) < 1e-9 and step_index >= lc.start_step:
            return "done"
        if step_index >= lc.start_step - lc.signal_steps:
            return "signalling"
        return "none"


@dataclass(frozen=True)
class CollisionReport:
    ego_box: tuple[float, float, float, float]
    agent_id: int
    step_index: int


@dataclass(frozen=True)
class WorldState:
    step_index: int
    ego: VehicleState
    ego_params: VehicleParams
    agents: tuple[Agent, ...]
    road: RoadGeometry = field(default_factory=RoadGeometry)
    rng_seed: int = 0
    dt: float = 0.1

    def agent(self, agent_id: int) -> Agent:
        for a in self.agents:
            if a.id == agent_id:
                return a
        raise KeyError(f"unknown agent id {agent_id}")


def _box(s: VehicleState, p: VehicleParams):
    return (s.x - p.length / 2, s.x + p.length / 2, s.y - p.width / 2, s.y + p.width / 2)


def _overlap(a, b) -> bool:
    # strict inequalities: touching edges are not a collision
    return a[0] < b[1] and b[0] < a[1] and a[2] < b[3] and b[2] < a[3]


def check_collision(w: WorldState) -> Optional[CollisionReport]:
    ego_box = _box(w.ego, w.ego_params)
    for a in w.agents:
        if _overlap(ego_box, _box(a.state, a.params)):
            return CollisionReport(ego_box, a.id, w.step_index)
    return None


# -- scripted agent behaviour ------------------------------------------------

# worst braking assumed for whatever is ahead of an agent
ASSUMED_LEADER_BRAKE = 5.0
GUARD_MARGIN = 2.0


def _vehicles(w: WorldState):
    yield -1, w.ego, w.ego_params
    for a in w.agents:
        yield a.id, a.state, a.params


def _guard_accel(agent: Agent, w: WorldState) -> float:
    """Upper bound on acceleration that keeps the agent clear of whatever is ahead."""
    me, p = agent.state, agent.params
    brake = -agent.policy.envelope[0]
    bound = math.inf
    for vid, s, q in _vehicles(w):
        if vid == agent.id or s.x <= me.x:
            continue
        if abs(s.y - me.y) >= (p.width + q.width) / 2 + 0.5:
            continue
        gap = s.x - me.x - (p.length + q.length) / 2
        v_me, v_l = max(me.vx, 0.0), max(s.vx, 0.0)
        my_stop = v_me**2 / (2 * brake) if brake > 0 else math.inf
        stop_gap = gap + v_l**2 / (2 * ASSUMED_LEADER_BRAKE) - my_stop - v_me * w.dt
        if gap < GUARD_MARGIN or stop_gap < GUARD_MARGIN:
            bound = -math.inf
        elif v_me > v_l:
            bound = min(bound, (v_l**2 - v_me**2) / (2 * max(gap - GUARD_MARGIN, 1e-3)))
    return bound


def _desired_accel(agent: Agent, w: WorldState) -> float:
    pol, me = agent.policy, agent.state
    if pol.mode is PolicyMode.ConstantSpeed:
        return 0.0
    if pol.mode is PolicyMode.PiecewiseAccel:
        return pol.scheduled_accel(w.step_index)
    # FollowerReactive: reacts to the ego ahead in its own or an adjacent lane
    cruise = pol.cruise_speed if pol.cruise_speed is not None else me.vx
    ego = w.ego
    dx = ego.x - me.x
    dy = abs(ego.y - me.y)
    lw = w.road.lane_width
    if 0.0 < dx <= pol.interaction_range and dy < 1.5 * lw:
        if pol.cooperative:
            if dy < lw:  # ego has entered the half-lane ahead
                return pol.react_decel
            return min(max(ego.vx - 1.0 - me.vx, pol.react_decel), 0.0)
        return pol.react_accel
    return min(max(0.5 * (cruise - me.vx), pol.react_decel), pol.react_accel)


def agent_command(agent: Agent, w: WorldState) -> float:
    lo, hi = agent.policy.envelope
    acc = min(_desired_accel(agent, w), _guard_accel(agent, w))
    return min(max(acc, lo), hi)


def advance_longitudinal(x: float, v: float, a: float, dt: float, v_max: float):
    """Exact constant-acceleration update with the speed held inside [0, v_max]."""
    v_end = v + a * dt
    if v_end < 0.0:
        return x + v * v / (-2.0 * a), 0.0
    if v_end > v_max:
        t = (v_max - v) / a if a > 0 else 0.0
        return x + v * t + 0.5 * a * t * t + v_max * (dt - t), v_max
    return x + v * dt + 0.5 * a * dt * dt, v_end


def _advance_agent(agent: Agent, w: WorldState, injected: float = 0.0) -> Agent:
    acc = agent_command(agent, w)
    lo, hi = agent.policy.envelope
    if not lo - 1e-12 <= acc <= hi + 1e-12:
        raise EnvelopeViolation(f"agent {agent.id} accel {acc} outside {agent.policy.envelope}")
    s = agent.state
    x, vx = advance_longitudinal(s.x, s.vx, acc + injected, w.dt, agent.params.v_max)
    y, vy = s.y, 0.0
    lc = agent.policy.lane_change
    if lc is not None and w.step_index >= lc.start_step:
        target = w.road.center(lc.target_lane)
        dist = target - y
        move = lc.lateral_speed * w.dt
        if abs(dist) <= move:
            y, vy = target, 0.0
        else:
            y = y + math.copysign(move, dist)
            vy = math.copysign(lc.lateral_speed, dist)
    return replace(agent, state=VehicleState(x, y, vx, vy))


def world_step(w: WorldState, ego_u: ControlInput, fault: Optional[dict] = None) -> WorldState:
    """Advance ego and agents by one control interval.

    ``fault`` maps agent id to an extra acceleration applied outside the
    envelope check; it exists only to exercise containment monitoring.
    """
    ego = step(w.ego, ego_u, w.dt, w.ego_params)
    fault = fault or {}
    agents = tuple(_advance_agent(a, w, fault.get(a.id, 0.0)) for a in w.agents)
    return replace(w, step_index=w.step_index + 1, ego=ego, agents=agents)


# -- scenario files ----------------------------------------------------------


@dataclass(frozen=True)
class Scenario:
    name: str
    world: WorldState
    steps: int
    digest: str
    task: Optional[tuple[LaneId, LaneId]] = None  # (source, target) for the lane-change protocol
    raw: dict = field(default_factory=dict, compare=False)


def _lane(value) -> LaneId:
    if isinstance(value, str):
        return LaneId[value.replace(" Lane", "").strip().capitalize()]
    return LaneId(int(value))


def _params(d: Optional[dict]) -> VehicleParams:
    return VehicleParams(**(d or {}))


def _policy(d: dict) -> ScriptedPolicy:
    d = dict(d)
    mode = PolicyMode(d.pop("mode", "ConstantSpeed"))
    lc = d.pop("lane_change", None)
    if lc is not None:
        lc = dict(lc)
        lc["target_lane"] = _lane(lc["target_lane"])
        lc = LaneChange(**lc)
    sched = tuple((int(s), float(a)) for s, a in d.pop("schedule", ()))
    env = tuple(float(v) for v in d.pop("envelope", (-5.0, 1.5)))
    return ScriptedPolicy(mode=mode, schedule=sched, envelope=env, lane_change=lc, **d)


def scenario_from_dict(data: dict, seed: Optional[int] = None, digest: str = "") -> Scenario:
    if data.get("schema") != SCENARIO_SCHEMA:
        raise ScenarioError(f"unsupported scenario schema {data.get('schema')!r}")
    seed = int(data.get("seed", 0) if seed is None else seed)
    rng = np.random.default_rng(seed)
    jitter = data.get("jitter", {})
    jx, jv = float(jitter.get("x", 0.0)), float(jitter.get("vx", 0.0))
    road = RoadGeometry(**data.get("road", {}))
    ego_d = data["ego"]
    ego_params = _params(ego_d.get("params"))
    ego_y = road.center(_lane(ego_d["lane"])) if "lane" in ego_d else float(ego_d["y"])
    ego = VehicleState(float(ego_d.get("x", 0.0)), ego_y, float(ego_d["vx"]), 0.0)

    agents = []
    for ad in data.get("agents", []):
        params = _params(ad.get("params"))
        lane = _lane(ad["lane"]) if "lane" in ad else lane_of(float(ad["y"]), road)
        y = road.center(lane) if "lane" in ad else float(ad["y"])
        x = float(ad["x"]) + (rng.uniform(-jx, jx) if jx else 0.0)
        vx = float(ad["vx"]) + (rng.uniform(-jv, jv) if jv else 0.0)
        vx = min(max(vx, 0.0), params.v_max)
        agents.append(Agent(int(ad["id"]), VehicleState(x, y, vx, 0.0), params, _policy(ad.get("policy", {})), lane))

    world = WorldState(0, ego, ego_params, tuple(agents), road, seed, float(data.get("dt", 0.1)))
    boxes = [_box(ego, ego_params)] + [_box(a.state, a.params) for a in agents]
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            if _overlap(boxes[i], boxes[j]):
                raise ScenarioError("vehicles overlap at episode start")
    task = None
    if "task" in data:
        task = (_lane(data["task"]["source_lane"]), _lane(data["task"]["target_lane"]))
    return Scenario(data.get("name", "scenario"), world, int(data.get("steps", 300)), digest, task, data)


def load_scenario(path, seed: Optional[int] = None) -> Scenario:
    raw = Path(path).read_bytes()
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc
    return scenario_from_dict(data, seed=seed, digest=hashlib.sha256(raw).hexdigest())
