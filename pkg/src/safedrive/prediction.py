"""Interval position prediction and TTC-based intention estimates."""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from safedrive.dynamics import VehicleState
from safedrive.world import Agent, LaneId, WorldState, advance_longitudinal, lane_of

DEFAULT_EPS_Y = 0.2
DEFAULT_THETA_AGGR = 6.0


class ContainmentViolation(RuntimeError):
    """A realized agent position fell outside a previously issued prediction box."""


class NotEnoughHistory(ValueError):
    pass


class Relation(str, enum.Enum):
    LeaderSameLane = "LeaderSameLane"
    LeaderTargetLane = "LeaderTargetLane"
    FollowerTargetLane = "FollowerTargetLane"

    @property
    def is_leader(self) -> bool:
        return self is not Relation.FollowerTargetLane


class IntentionLabel(str, enum.Enum):
    Cooperative = "Cooperative"
    Aggressive = "Aggressive"


@dataclass(frozen=True)
class IntervalPrediction:
    """Per-step boxes for lookahead ``i = 1..k``; ``boxes[i-1]`` is step ``i``.

    ``speed_lo``/``speed_hi`` bound the agent's speed at each step and ``brake``
    is its worst-case deceleration magnitude; the planner's terminal
    constraint needs them.
    """

    agent_id: int
    boxes: tuple[tuple[float, float, float, float], ...]
    speed_lo: tuple[float, ...] = ()
    speed_hi: tuple[float, ...] = ()
    brake: float = 0.0
    length: float = 5.0
    width: float = 2.0
    issued_at: int = 0

    @property
    def k(self) -> int:
        return len(self.boxes)

    def contains(self, i: int, x: float, y: float, tol: float = 1e-6) -> bool:
        x_lo, x_hi, y_lo, y_hi = self.boxes[i - 1]
        return x_lo - tol <= x <= x_hi + tol and y_lo - tol <= y <= y_hi + tol


def predict_agent(agent: Agent, step_index: int, road, k: int, dt: float, eps_y: float = DEFAULT_EPS_Y) -> IntervalPrediction:
    if k < 1:
        raise ValueError("horizon must be at least one step")
    s = agent.state
    a_lo, a_hi = agent.policy.envelope
    v_max = agent.params.v_max
    if agent.lane_change_state(step_index, road) == "signalling":
        target = road.center(agent.policy.lane_change.target_lane)
        y_lo, y_hi = min(s.y, target) - eps_y, max(s.y, target) + eps_y
    else:
        y_lo, y_hi = s.y - eps_y, s.y + eps_y
    boxes, v_lo, v_hi = [], [], []
    for i in range(1, k + 1):
        tau = i * dt
        x_lo, vl = advance_longitudinal(s.x, s.vx, a_lo, tau, v_max)
        x_hi, vh = advance_longitudinal(s.x, s.vx, a_hi, tau, v_max)
        boxes.append((x_lo, x_hi, y_lo, y_hi))
        v_lo.append(vl)
        v_hi.append(vh)
    return IntervalPrediction(
        agent.id, tuple(boxes), tuple(v_lo), tuple(v_hi), max(0.0, -a_lo),
        agent.params.length, agent.params.width, step_index,
    )


def predict_intervals(w: WorldState, agent_id: int, k: int, dt: Optional[float] = None, eps_y: float = DEFAULT_EPS_Y) -> IntervalPrediction:
    return predict_agent(w.agent(agent_id), w.step_index, w.road, k, w.dt if dt is None else dt, eps_y)


def predict_all(w: WorldState, k: int, sensing_range: float = 150.0, eps_y: float = DEFAULT_EPS_Y) -> list[IntervalPrediction]:
    return [
        predict_agent(a, w.step_index, w.road, k, w.dt, eps_y)
        for a in w.agents
        if abs(a.state.x - w.ego.x) <= sensing_range
    ]


def check_containment(w: WorldState, issued: Iterable[IntervalPrediction], tol: float = 1e-6) -> None:
    """Raise if any agent sits outside a box issued for the current step."""
    positions = {a.id: a.state for a in w.agents}
    for pred in issued:
        i = w.step_index - pred.issued_at
        if not 1 <= i <= pred.k or pred.agent_id not in positions:
            continue
        s = positions[pred.agent_id]
        if not pred.contains(i, s.x, s.y, tol):
            raise ContainmentViolation(
                f"agent {pred.agent_id} at ({s.x:.4f}, {s.y:.4f}) outside box {pred.boxes[i - 1]} "
                f"issued at step {pred.issued_at} for step {w.step_index}"
            )


# -- time to collision ---------------------------------------------------------


@dataclass(frozen=True)
class TtcSample:
    step_index: int
    agent_id: int
    ttc: float
    relation: Relation


def compute_ttc(ego: VehicleState, other: VehicleState, relation: Relation, gap_length: float) -> float:
    if relation.is_leader:
        gap = other.x - ego.x - gap_length
        closing = ego.vx - other.vx
    else:
        gap = ego.x - other.x - gap_length
        closing = other.vx - ego.vx
    if gap < 0:
        return 0.0
    if closing <= 0:
        return math.inf
    return gap / closing


def classify_intention(history: Sequence[TtcSample], theta_aggr: float = DEFAULT_THETA_AGGR) -> IntentionLabel:
    """Label a target-lane follower from its last three TTC samples."""
    if len(history) < 3:
        raise NotEnoughHistory(f"need 3 samples, got {len(history)}")
    a, b, c = (h.ttc for h in history[-3:])
    if math.isinf(c):
        return IntentionLabel.Cooperative
    if a > b > c and c < theta_aggr:
        return IntentionLabel.Aggressive
    return IntentionLabel.Cooperative


def neighbours(w: WorldState, lane: LaneId) -> tuple[Optional[Agent], Optional[Agent]]:
    """Nearest agent ahead of and behind the ego whose centre lies in ``lane``."""
    ego = w.ego
    ahead = behind = None
    for a in w.agents:
        if lane_of(a.state.y, w.road) != lane:
            continue
        if a.state.x >= ego.x:
            if ahead is None or a.state.x < ahead.state.x:
                ahead = a
        elif behind is None or a.state.x > behind.state.x:
            behind = a
    return ahead, behind


def ttc_samples(w: WorldState, source: LaneId, target: Optional[LaneId], sensing_range: float = 150.0) -> list[TtcSample]:
    """TTC to the same-lane leader and to the target-lane leader and follower."""
    out = []
    gap = w.ego_params.length
    lead, _ = neighbours(w, source)
    pairs = [(lead, Relation.LeaderSameLane)]
    if target is not None and target != source:
        t_lead, t_follow = neighbours(w, target)
        pairs += [(t_lead, Relation.LeaderTargetLane), (t_follow, Relation.FollowerTargetLane)]
    for agent, rel in pairs:
        if agent is None or abs(agent.state.x - w.ego.x) > sensing_range:
            continue
        out.append(TtcSample(w.step_index, agent.id, compute_ttc(w.ego, agent.state, rel, gap), rel))
    return out


@dataclass(frozen=True)
class Observation:
    step_index: int
    state: VehicleState
    ttc: TtcSample


class MemoryBuffer:
    """Last ``capacity`` observations per agent, oldest first."""

    def __init__(self, capacity: int = 5):
        if capacity < 3:
            raise ValueError("memory must hold at least 3 observations")
        self.capacity = capacity
        self._obs: dict[int, deque] = {}

    def add(self, obs: Observation) -> None:
        buf = self._obs.setdefault(obs.ttc.agent_id, deque(maxlen=self.capacity))
        if buf and buf[-1].step_index >= obs.step_index:
            raise ValueError("observations must arrive in step order")
        buf.append(obs)

    def record(self, w: WorldState, samples: Iterable[TtcSample]) -> None:
        states = {a.id: a.state for a in w.agents}
        for s in samples:
            self.add(Observation(s.step_index, states[s.agent_id], s))

    def history(self, agent_id: int) -> list[Observation]:
        return list(self._obs.get(agent_id, ()))

    def ttc_window(self, agent_id: int, relation: Relation, n: int = 3) -> list[TtcSample]:
        """Trailing run of samples with ``relation`` (at most ``n``)."""
        run = []
        for obs in reversed(self._obs.get(agent_id, ())):
            if obs.ttc.relation is not relation:
                break
            run.append(obs.ttc)
            if len(run) == n:
                break
        return run[::-1]

    def intention(self, agent_id: int, theta_aggr: float = DEFAULT_THETA_AGGR) -> Optional[IntentionLabel]:
        """Label for a target-lane follower, or ``None`` with too little history."""
        try:
            return classify_intention(self.ttc_window(agent_id, Relation.FollowerTargetLane), theta_aggr)
        except NotEnoughHistory:
            return None

    def agents(self) -> list[int]:
        return sorted(self._obs)
