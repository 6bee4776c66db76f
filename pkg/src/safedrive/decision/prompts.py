"""System prompts, rendered from versioned text templates."""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from string import Template
from typing import Iterable, Optional

from safedrive.decision.protocol import BehaviorState, DecisionCase
from safedrive.prediction import DEFAULT_THETA_AGGR, Relation, TtcSample, classify_intention
from safedrive.world import LaneId

PROMPT_VERSION = 1

# TTC histories used as worked examples in the lane-change prompt
DEMO_HISTORIES = ((6.0, 4.5, 3.0), (4.0, 4.2, 4.5), (9.0, 8.0, 7.0))


@dataclass(frozen=True)
class PromptConfig:
    theta_ttc: float = 3.0
    theta_aggr: float = DEFAULT_THETA_AGGR
    attempt_dwell: int = 2


def _template(case: DecisionCase) -> Template:
    name = f"{'case1' if case is DecisionCase.Case1 else 'case2'}_v{PROMPT_VERSION}.txt"
    return Template(resources.files("safedrive.decision").joinpath("templates", name).read_text())


def _demo(history, theta_aggr: float) -> str:
    samples = [TtcSample(i, 0, t, Relation.FollowerTargetLane) for i, t in enumerate(history)]
    label = classify_intention(samples, theta_aggr).value
    return f"- TTC [{', '.join(f'{t:.1f}' for t in history)}] s -> {label}"


def build_system_prompt(
    case: DecisionCase,
    edges: Optional[Iterable[tuple[BehaviorState, BehaviorState]]] = None,
    cfg: PromptConfig = PromptConfig(),
) -> str:
    if case is DecisionCase.Case1:
        return _template(case).substitute(options=", ".join(lane.label for lane in LaneId))
    if edges is None:
        raise ValueError("the lane-change prompt needs the state machine edges")
    order = list(BehaviorState)
    listed = sorted(edges, key=lambda e: (order.index(e[0]), order.index(e[1])))
    return _template(case).substitute(
        edges="\n".join(f"- {a.value} -> {b.value}" for a, b in listed),
        dwell=cfg.attempt_dwell,
        theta_ttc=f"{cfg.theta_ttc:g}",
        theta_aggr=f"{cfg.theta_aggr:g}",
        demos="\n".join(_demo(h, cfg.theta_aggr) for h in DEMO_HISTORIES),
    )
