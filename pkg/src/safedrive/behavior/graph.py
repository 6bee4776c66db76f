"""Lane-change state machine and the reflection checks on proposed transitions."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

from safedrive.decision.protocol import BehaviorState
from safedrive.prediction import IntentionLabel

S = BehaviorState

DEFAULT_EDGES = frozenset({
    (S.Stay, S.Stay),
    (S.Stay, S.Attempt),
    (S.Attempt, S.Attempt),
    (S.Attempt, S.Finish),
    (S.Attempt, S.Abort),
    (S.Abort, S.Stay),
    (S.Finish, S.Finish),
})


class InvalidTransition(ValueError):
    pass


@dataclass(frozen=True)
class StateMachineGraph:
    edges: frozenset = DEFAULT_EDGES

    @property
    def nodes(self) -> frozenset:
        return frozenset(s for e in self.edges for s in e)

    def allows(self, a: BehaviorState, b: BehaviorState) -> bool:
        return (a, b) in self.edges

    def successors(self, a: BehaviorState) -> tuple[BehaviorState, ...]:
        return tuple(b for b in BehaviorState if (a, b) in self.edges)

    def require(self, a: BehaviorState, b: BehaviorState) -> None:
        if not self.allows(a, b):
            raise InvalidTransition(f"{a.value} -> {b.value} is not an edge of the state machine")


class Check(str, enum.Enum):
    Pass = "pass"
    Fail = "fail"
    NotApplicable = "n/a"


@dataclass(frozen=True)
class TransitionVerdict:
    current: BehaviorState
    proposed: BehaviorState
    state_check: Check
    safety_check: Check
    min_ttc: float
    theta_ttc: float
    prediction_check: Check
    intention: Optional[IntentionLabel]
    reasons: tuple[str, ...] = ()

    @property
    def overall(self) -> bool:
        return Check.Fail not in (self.state_check, self.safety_check, self.prediction_check)


def reflect(
    proposed: BehaviorState,
    current: BehaviorState,
    graph: StateMachineGraph,
    ttc_now: float,
    intention: Optional[IntentionLabel],
    theta_ttc: float = 3.0,
    attempt_dwell: Optional[int] = None,
    min_dwell: int = 2,
) -> TransitionVerdict:
    """Run the state, safety and prediction checks on ``current -> proposed``.

    ``intention`` is the label of the target-lane follower, ``None`` when
    there is no follower to judge.  ``attempt_dwell`` (cycles already spent
    in Attempt) is only consulted for Attempt -> Finish.
    """
    reasons = []
    state_ok = graph.allows(current, proposed)
    if not state_ok:
        allowed = ", ".join(s.value for s in graph.successors(current))
        reasons.append(f"{current.value} -> {proposed.value} is not an allowed transition (allowed: {allowed})")
    elif proposed is S.Finish and current is S.Attempt and attempt_dwell is not None and attempt_dwell < min_dwell:
        state_ok = False
        reasons.append(f"Finish needs at least {min_dwell} cycles in Attempt, only {attempt_dwell} so far")

    safety_ok = ttc_now >= theta_ttc
    if not safety_ok:
        reasons.append(f"minimum TTC {ttc_now:.1f} s is below the {theta_ttc:.1f} s threshold")

    if proposed is S.Finish:
        pred_ok = intention is None or intention is IntentionLabel.Cooperative
        if not pred_ok:
            reasons.append(f"the following vehicle is predicted {intention.value.lower()}; finishing is unsafe")
        prediction = Check.Pass if pred_ok else Check.Fail
    else:
        prediction = Check.NotApplicable
    return TransitionVerdict(
        current, proposed,
        Check.Pass if state_ok else Check.Fail,
        Check.Pass if safety_ok else Check.Fail,
        ttc_now, theta_ttc, prediction, intention, tuple(reasons),
    )


def reflection_feedback(v: TransitionVerdict) -> str:
    ttc = "inf" if math.isinf(v.min_ttc) else f"{v.min_ttc:.1f}"
    head = (
        f"Reflection result for {v.current.value} -> {v.proposed.value}: "
        f"state check {v.state_check.value}, safety check {v.safety_check.value} (min TTC {ttc} s), "
        f"prediction check {v.prediction_check.value}."
    )
    if v.overall:
        return head
    return head + " " + "; ".join(v.reasons) + ". Please propose a different next state."
