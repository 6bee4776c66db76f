"""Approve a proposed behavior iff the trajectory problem it induces is feasible."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from safedrive.decision.protocol import BehaviorState, Decision
from safedrive.planner.mpc import MpcConfig, MpcProblem, MpcUsageError, PlanResult, solve_lane_conditioned
from safedrive.prediction import IntervalPrediction
from safedrive.world import LaneId, WorldState, lane_of

FEEDBACK_VERSION = 1

_CONSTRAINT_WORDS = {
    "road_boundary": "road boundary",
    "lane_commitment": "lane commitment",
    "safety": "safety",
    "terminal_safety": "safe stopping distance",
}


class Outcome(str, enum.Enum):
    Approved = "Approved"
    Rejected = "Rejected"


@dataclass(frozen=True)
class VerifierConfig:
    k: int = 10
    mpc: MpcConfig = field(default_factory=MpcConfig)
    # half-width of the band the ego must hold around the lane line while probing
    attempt_band: float = 0.5


@dataclass(frozen=True)
class FeedbackMessage:
    text: str
    outcome: Outcome
    option: str
    constraint: Optional[str] = None
    step: Optional[int] = None
    magnitude: Optional[float] = None
    agent_id: Optional[int] = None

    def meta(self) -> dict:
        return {
            "kind": "verifier", "outcome": self.outcome.value, "option": self.option,
            "constraint": self.constraint, "step": self.step, "magnitude": self.magnitude,
            "agent_id": self.agent_id,
        }


@dataclass(frozen=True)
class Verdict:
    outcome: Outcome
    proposed: Decision
    plan: PlanResult
    feedback: FeedbackMessage

    @property
    def approved(self) -> bool:
        return self.outcome is Outcome.Approved


def feedback_for(d: Decision, plan: PlanResult) -> FeedbackMessage:
    option = d.token
    if plan.feasible:
        text = f"Verification result: the verifier is happy with the proposed {option}. It will be executed."
        return FeedbackMessage(text, Outcome.Approved, option)
    worst = plan.diagnostics.worst
    if worst is None:
        text = f"Verification result: the proposed {option} was rejected. Please reconsider and propose a different option."
        return FeedbackMessage(text, Outcome.Rejected, option)
    what = _CONSTRAINT_WORDS.get(worst.name, worst.name)
    who = f" with respect to vehicle {worst.agent_id}" if worst.agent_id is not None else ""
    text = (
        f"Verification result: the proposed {option} was rejected. No safe trajectory exists: "
        f"the {what} constraint{who} is violated at step {worst.step} by {worst.magnitude:.2f} m. "
        f"Please reconsider and propose a different option."
    )
    return FeedbackMessage(text, Outcome.Rejected, option, worst.name, worst.step, worst.magnitude, worst.agent_id)


def problem_for(
    d: Decision,
    w: WorldState,
    predictions: Sequence[IntervalPrediction],
    cfg: VerifierConfig,
    task: Optional[tuple[LaneId, LaneId]] = None,
) -> MpcProblem:
    """The trajectory problem a decision induces."""
    base = dict(s0=w.ego, k=cfg.k, dt=w.dt, predictions=tuple(predictions), road=w.road, params=w.ego_params, cfg=cfg.mpc)
    if isinstance(d.choice, LaneId):
        return MpcProblem(target_lane=d.choice, **base)
    if not isinstance(d.choice, BehaviorState):
        raise MpcUsageError(f"cannot verify decision {d.choice!r}")
    if task is None:
        raise MpcUsageError("a state decision needs the (source, target) lanes of the task")
    source, target = task
    if d.choice in (BehaviorState.Stay, BehaviorState.Abort):
        return MpcProblem(target_lane=source, **base)
    if d.choice is BehaviorState.Finish:
        return MpcProblem(target_lane=target, **base)
    line = w.road.boundary(source, target)
    band = (line - cfg.attempt_band, line + cfg.attempt_band)
    return MpcProblem(target_lane=target, y_ref=line, commit_band=band, **base)


def verify(
    d: Decision,
    w: WorldState,
    predictions: Sequence[IntervalPrediction],
    cfg: VerifierConfig = VerifierConfig(),
    task: Optional[tuple[LaneId, LaneId]] = None,
) -> Verdict:
    plan = solve_lane_conditioned(problem_for(d, w, predictions, cfg, task))
    outcome = Outcome.Approved if plan.feasible else Outcome.Rejected
    return Verdict(outcome, d, plan, feedback_for(d, plan))


def remaining_options(rejected: Iterable[Decision], current: LaneId) -> list[Decision]:
    """Untried lanes: the current one first, then nearest-first (left before right on ties)."""
    seen = {d.choice for d in rejected}
    order = sorted(LaneId, key=lambda lane: (abs(int(lane) - int(current)), int(lane)))
    return [Decision(lane) for lane in order if lane not in seen]


def current_lane(w: WorldState) -> LaneId:
    return lane_of(w.ego.y, w.road)
