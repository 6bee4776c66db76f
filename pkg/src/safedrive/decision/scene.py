"""Text rendering of the ego's surroundings for the decision-maker."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

from safedrive.decision.protocol import BehaviorState
from safedrive.prediction import IntentionLabel, IntervalPrediction, Relation, compute_ttc
from safedrive.world import LaneId, WorldState, lane_of, lanes_of_interval

DEFAULT_PERCEPTION_RANGE = 150.0
SAME_SPEED_TOL = 0.5  # m/s


@dataclass(frozen=True)
class SceneFact:
    agent_id: int
    lane: LaneId
    position: str  # "in front of" | "behind" | "alongside"
    speed: str  # "faster than" | "slower than" | "at about the same speed as"
    gap: float  # bumper to bumper, m (negative when alongside)
    agent_speed: float
    ttc: float
    intention: Optional[IntentionLabel] = None
    may_enter: Optional[LaneId] = None


@dataclass(frozen=True)
class LaneChangeContext:
    """Extra state the lane-change protocol shows the decision-maker."""

    state: BehaviorState
    allowed: tuple[BehaviorState, ...]
    source: LaneId
    target: LaneId
    ttc_now: float
    theta_ttc: float
    follower_id: Optional[int]
    follower_ttc_history: tuple[float, ...]
    follower_intention: Optional[IntentionLabel]
    attempt_dwell: int


@dataclass(frozen=True)
class SceneDescription:
    text: str
    facts: tuple[SceneFact, ...]
    ego_lane: LaneId
    ego_speed: float
    lane_change: Optional[LaneChangeContext] = field(default=None)

    def front_gap(self, lane: LaneId) -> float:
        """Gap to the nearest vehicle ahead in ``lane`` (inf when clear)."""
        gaps = [f.gap for f in self.facts if f.lane == lane and f.position != "behind"]
        return min(gaps, default=math.inf)


def _fmt_ttc(ttc: float) -> str:
    if math.isinf(ttc):
        return "no closing"
    return f"time to collision approximately {ttc:.1f} seconds"


def _lane_words(lane: LaneId) -> str:
    return lane.name.lower()


def _render_fact(f: SceneFact) -> str:
    if f.position == "alongside":
        where = f"alongside the ego in the {_lane_words(f.lane)} lane"
    else:
        where = f"{f.position} the ego in the {_lane_words(f.lane)} lane, {f.gap:.1f} m away"
    text = (
        f"Vehicle {f.agent_id} is {where}, driving {f.speed} the ego "
        f"({f.agent_speed:.1f} m/s), {_fmt_ttc(f.ttc)}."
    )
    if f.may_enter is not None:
        text += f" It may move into the {_lane_words(f.may_enter)} lane."
    if f.intention is not None:
        text += f" It appears {f.intention.value.lower()}."
    return text


def _render_context(c: LaneChangeContext) -> str:
    hist = ", ".join("inf" if math.isinf(t) else f"{t:.1f}" for t in c.follower_ttc_history) or "none"
    if c.follower_id is None:
        follower = f"There is no vehicle following in the {_lane_words(c.target)} lane."
    else:
        label = c.follower_intention.value if c.follower_intention else "unknown (too little history)"
        follower = (
            f"Following vehicle {c.follower_id} in the {_lane_words(c.target)} lane: "
            f"TTC history (oldest first) [{hist}] s, estimated intention {label}."
        )
    ttc = "inf" if math.isinf(c.ttc_now) else f"{c.ttc_now:.1f}"
    return "\n".join([
        f"Task: change from the {_lane_words(c.source)} lane to the {_lane_words(c.target)} lane.",
        f"Current state: {c.state.value}. Allowed next states: {', '.join(s.value for s in c.allowed)}.",
        f"Cycles spent in Attempt: {c.attempt_dwell}.",
        f"Minimum TTC to target-lane vehicles: {ttc} s (threshold {c.theta_ttc:.1f} s).",
        follower,
    ])


def describe_scene(
    w: WorldState,
    predictions: Sequence[IntervalPrediction] = (),
    intentions: Optional[Mapping[int, IntentionLabel]] = None,
    perception_range: float = DEFAULT_PERCEPTION_RANGE,
    lane_change: Optional[LaneChangeContext] = None,
) -> SceneDescription:
    intentions = intentions or {}
    ego, road = w.ego, w.road
    ego_lane = lane_of(ego.y, road)
    gap_len = w.ego_params.length
    spans = {}
    for pred in predictions:
        _, _, y_lo, y_hi = pred.boxes[-1]
        spans[pred.agent_id] = lanes_of_interval(y_lo, y_hi, 0.0, road)

    facts = []
    for a in w.agents:
        s = a.state
        dx = s.x - ego.x
        if abs(dx) > perception_range:
            continue
        lane = lane_of(s.y, road)
        gap = abs(dx) - (gap_len + a.params.length) / 2
        if gap < 0:
            position, ttc = "alongside", 0.0
        elif dx >= 0:
            position = "in front of"
            ttc = compute_ttc(ego, s, Relation.LeaderSameLane, (gap_len + a.params.length) / 2)
        else:
            position = "behind"
            ttc = compute_ttc(ego, s, Relation.FollowerTargetLane, (gap_len + a.params.length) / 2)
        dv = s.vx - ego.vx
        if abs(dv) < SAME_SPEED_TOL:
            speed = "at about the same speed as"
        else:
            speed = "faster than" if dv > 0 else "slower than"
        others = sorted(spans.get(a.id, set()) - {lane})
        facts.append(SceneFact(a.id, lane, position, speed, gap, s.vx, ttc, intentions.get(a.id), others[0] if others else None))
    facts.sort(key=lambda f: (int(f.lane), abs(w.agent(f.agent_id).state.x - ego.x), f.agent_id))

    lines = [f"The ego is driving in the {_lane_words(ego_lane)} lane at {ego.vx:.1f} m/s."]
    if not facts:
        lines.append(f"All lanes are clear within {perception_range:.0f} m.")
    for lane in LaneId:
        mine = [f for f in facts if f.lane == lane]
        if not mine:
            if facts:
                lines.append(f"The {_lane_words(lane)} lane is clear within {perception_range:.0f} m.")
            continue
        lines += [_render_fact(f) for f in mine]
    if lane_change is not None:
        lines.append(_render_context(lane_change))
    return SceneDescription("\n".join(lines), tuple(facts), ego_lane, ego.vx, lane_change)
