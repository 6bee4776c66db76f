"""Closed-loop decision cycles.

A cycle asks the decision-maker for a behavior, checks it, and then drives
``n_llm`` control steps.  Only two things ever reach the actuators: the first
control of a plan the verifier found feasible on the current world, or the
failsafe controller.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional

from safedrive.behavior.graph import Check, StateMachineGraph, TransitionVerdict, reflect, reflection_feedback
from safedrive.decision.backends import Backend, TransportError
from safedrive.decision.parse import DecisionParseError, parse_decision
from safedrive.decision.prompts import PromptConfig, build_system_prompt
from safedrive.decision.protocol import BehaviorState, Conversation, Decision, DecisionCase
from safedrive.decision.scene import LaneChangeContext, SceneDescription, describe_scene
from safedrive.dynamics import ControlInput
from safedrive.planner.failsafe import FailsafeConfig, failsafe_control, find_leader
from safedrive.planner.mpc import solve_lane_conditioned
from safedrive.prediction import (
    DEFAULT_THETA_AGGR,
    IntentionLabel,
    IntervalPrediction,
    MemoryBuffer,
    Relation,
    ttc_samples,
)
from safedrive.sim import Simulation
from safedrive.verifier import Verdict, VerifierConfig, problem_for, remaining_options, verify
from safedrive.world import LaneId, WorldState, lane_of

VerifyFn = Callable[..., Verdict]

FORMAT_REMINDER = (
    "Your answer could not be parsed ({error}). End your answer with exactly one line "
    "of the form 'DECISION: <option>'."
)


class ActionSource(str, enum.Enum):
    Planner = "Planner"
    Failsafe = "Failsafe"


@dataclass(frozen=True)
class BehaviorConfig:
    n_llm: int = 5  # control steps per decision cycle
    verifier: VerifierConfig = field(default_factory=VerifierConfig)
    failsafe: FailsafeConfig = field(default_factory=FailsafeConfig)
    perception_range: float = 150.0
    theta_ttc: float = 3.0
    theta_aggr: float = DEFAULT_THETA_AGGR
    retry_budget: int = 2  # lane-change protocol
    attempt_dwell: int = 2
    format_retries: int = 1
    memory_capacity: int = 5

    @property
    def prompt(self) -> PromptConfig:
        return PromptConfig(self.theta_ttc, self.theta_aggr, self.attempt_dwell)


@dataclass
class DecisionCycleLog:
    step_index: int
    case: str
    scene_text: str = ""
    raw: list = field(default_factory=list)
    proposals: list = field(default_factory=list)
    reflections: list = field(default_factory=list)
    verdicts: list = field(default_factory=list)
    retries: int = 0
    requests: int = 0
    source: str = ActionSource.Failsafe.value
    executed: Optional[str] = None
    from_state: Optional[str] = None
    to_state: Optional[str] = None
    auto_transition: Optional[str] = None
    error: Optional[str] = None
    steps_executed: int = 0
    mid_cycle_abort: Optional[int] = None
    solves: int = 0
    feasible_solves: int = 0
    backend_latency: list = field(default_factory=list)

    def to_dict(self, timing: bool = False) -> dict:
        d = asdict(self)
        if not timing:
            d.pop("backend_latency")
        return d


class _Clock:
    """Compute time of the current control step, with backend calls excluded."""

    def __init__(self):
        self.reset()

    def reset(self):
        self.start = time.perf_counter()
        self.backend = 0.0

    def compute(self) -> float:
        return time.perf_counter() - self.start - self.backend


def _verdict_dict(v: Verdict) -> dict:
    return {**v.feedback.meta(), "objective": v.plan.objective, "iterations": v.plan.diagnostics.iterations}


def _reflection_dict(t: TransitionVerdict) -> dict:
    return {
        "from": t.current.value, "to": t.proposed.value, "state": t.state_check.value,
        "safety": t.safety_check.value, "min_ttc": None if math.isinf(t.min_ttc) else t.min_ttc,
        "prediction": t.prediction_check.value,
        "intention": t.intention.value if t.intention else None, "overall": t.overall,
    }


def _ask(backend: Backend, conv: Conversation, scene: SceneDescription, case: DecisionCase,
         cfg: BehaviorConfig, log: DecisionCycleLog, clock: _Clock) -> Optional[Decision]:
    """One request plus format-reminder retries; ``None`` means degrade to failsafe."""
    for _ in range(1 + cfg.format_retries):
        log.requests += 1
        t0 = time.perf_counter()
        try:
            raw = backend(conv, scene)
        except TransportError as exc:
            log.error = f"transport: {exc}"
            return None
        finally:
            dt = time.perf_counter() - t0
            clock.backend += dt
            log.backend_latency.append(dt)
        log.raw.append(raw)
        conv.assistant(raw)
        try:
            d = parse_decision(raw, case)
        except DecisionParseError as exc:
            conv.user(FORMAT_REMINDER.format(error=type(exc).__name__), meta={"kind": "format"})
            continue
        log.proposals.append(d.token)
        return d
    log.error = "parse: no valid decision line"
    return None


def _run_verify(verify_fn: VerifyFn, d: Decision, w: WorldState, preds, cfg: BehaviorConfig,
                log: DecisionCycleLog, task=None) -> Verdict:
    v = verify_fn(d, w, preds, cfg.verifier, task)
    log.solves += 1
    log.feasible_solves += int(v.approved)
    log.verdicts.append(_verdict_dict(v))
    return v


# -- execution -----------------------------------------------------------------


def execute_failsafe(sim: Simulation, n: int, cfg: BehaviorConfig, log: DecisionCycleLog, clock: _Clock) -> list[ControlInput]:
    out = []
    for _ in range(n):
        w = sim.world
        u = failsafe_control(w.ego, find_leader(w), cfg.failsafe, w.ego_params, w.road, w.dt)
        sim.advance(u, ActionSource.Failsafe.value, clock.compute(), clock.backend)
        clock.reset()
        out.append(u)
    log.steps_executed = len(out)
    return out


def execute_plan(sim: Simulation, verdict: Verdict, n: int, cfg: BehaviorConfig, log: DecisionCycleLog,
                 clock: _Clock, task=None) -> list[ControlInput]:
    """First control of the approved plan, then a fresh solve before every further step."""
    out = []
    plan = verdict.plan
    for j in range(n):
        if j > 0:
            w = sim.world
            warm = plan.controls[1:] + plan.controls[-1:]
            prob = problem_for(verdict.proposed, w, sim.predictions(), cfg.verifier, task)
            plan = solve_lane_conditioned(replace(prob, warm_start=warm))
            log.solves += 1
            log.feasible_solves += int(plan.feasible)
            if not plan.feasible:
                log.mid_cycle_abort = w.step_index
                break
        u = plan.controls[0]
        sim.advance(u, ActionSource.Planner.value, clock.compute(), clock.backend)
        clock.reset()
        out.append(u)
    log.steps_executed = len(out)
    return out


# -- lane selection ------------------------------------------------------------


def decide_case1(w: WorldState, preds: list[IntervalPrediction], backend: Backend, cfg: BehaviorConfig,
                 log: DecisionCycleLog, clock: _Clock, verify_fn: VerifyFn = verify) -> Optional[Verdict]:
    """The approved verdict, or ``None`` when every option is exhausted."""
    scene = describe_scene(w, preds, None, cfg.perception_range)
    log.scene_text = scene.text
    conv = Conversation(build_system_prompt(DecisionCase.Case1))
    conv.user(scene.text)
    current = lane_of(w.ego.y, w.road)
    rejected: dict[LaneId, Verdict] = {}
    for request in range(len(LaneId)):
        if request:
            log.retries += 1
        d = _ask(backend, conv, scene, DecisionCase.Case1, cfg, log, clock)
        if d is None:
            return None
        if d.choice in rejected:
            fb = rejected[d.choice].feedback
            conv.user(f"{d.token} was already rejected. {fb.text}", meta=fb.meta())
            continue
        v = _run_verify(verify_fn, d, w, preds, cfg, log)
        if v.approved:
            return v
        rejected[d.choice] = v
        conv.user(v.feedback.text, meta=v.feedback.meta())
        if not remaining_options([Decision(lane) for lane in rejected], current):
            return None
    return None


def run_case1_cycle(sim: Simulation, backend: Backend, cfg: BehaviorConfig = BehaviorConfig(),
                    n_steps: Optional[int] = None) -> tuple[list[ControlInput], DecisionCycleLog]:
    clock = _Clock()
    n = cfg.n_llm if n_steps is None else n_steps
    w = sim.world
    log = DecisionCycleLog(w.step_index, DecisionCase.Case1.value)
    verdict = decide_case1(w, sim.predictions(), backend, cfg, log, clock)
    if verdict is None:
        log.source = ActionSource.Failsafe.value
        return execute_failsafe(sim, n, cfg, log, clock), log
    log.source = ActionSource.Planner.value
    log.executed = verdict.proposed.token
    return execute_plan(sim, verdict, n, cfg, log, clock), log


# -- state-machine lane change ---------------------------------------------------


@dataclass
class LaneChangeState:
    source: LaneId
    target: LaneId
    state: BehaviorState = BehaviorState.Stay
    dwell: int = 0  # consecutive cycles spent in Attempt
    memory: MemoryBuffer = None

    def __post_init__(self):
        if self.memory is None:
            self.memory = MemoryBuffer()

    @property
    def task(self) -> tuple[LaneId, LaneId]:
        return self.source, self.target


def lane_change_context(w: WorldState, lc: LaneChangeState, graph: StateMachineGraph, cfg: BehaviorConfig,
                        record: bool = True) -> LaneChangeContext:
    samples = ttc_samples(w, lc.source, lc.target, cfg.perception_range)
    if record:
        lc.memory.record(w, samples)
    target_ttc = [s.ttc for s in samples if s.relation is not Relation.LeaderSameLane]
    follower = next((s for s in samples if s.relation is Relation.FollowerTargetLane), None)
    fid = follower.agent_id if follower else None
    history = tuple(s.ttc for s in lc.memory.ttc_window(fid, Relation.FollowerTargetLane)) if fid is not None else ()
    intention = lc.memory.intention(fid, cfg.theta_aggr) if fid is not None else None
    return LaneChangeContext(
        lc.state, graph.successors(lc.state), lc.source, lc.target, min(target_ttc, default=math.inf),
        cfg.theta_ttc, fid, history, intention, lc.dwell,
    )


def decide_case2(w: WorldState, preds: list[IntervalPrediction], backend: Backend, lc: LaneChangeState,
                 graph: StateMachineGraph, cfg: BehaviorConfig, log: DecisionCycleLog, clock: _Clock,
                 verify_fn: VerifyFn = verify) -> Optional[Verdict]:
    """Pick and verify the next state; ``None`` means failsafe (state held)."""
    ctx = lane_change_context(w, lc, graph, cfg)
    intentions = {ctx.follower_id: ctx.follower_intention} if ctx.follower_intention else None
    scene = describe_scene(w, preds, intentions, cfg.perception_range, ctx)
    log.scene_text = scene.text
    conv = Conversation(build_system_prompt(DecisionCase.Case2, graph.edges, cfg.prompt))
    conv.user(scene.text)
    # missing history counts as aggressive; no follower at all leaves nothing to judge
    judged = None if ctx.follower_id is None else (ctx.follower_intention or IntentionLabel.Aggressive)
    safety_failed = False
    while True:
        d = _ask(backend, conv, scene, DecisionCase.Case2, cfg, log, clock)
        if d is None:
            return None
        ttc = ctx.ttc_now if d.choice in (BehaviorState.Attempt, BehaviorState.Finish) else math.inf
        tv = reflect(d.choice, lc.state, graph, ttc, judged, cfg.theta_ttc,
                     lc.dwell if lc.state is BehaviorState.Attempt else None, cfg.attempt_dwell)
        log.reflections.append(_reflection_dict(tv))
        if tv.overall:
            v = _run_verify(verify_fn, d, w, preds, cfg, log, lc.task)
            if v.approved:
                return v
            conv.user(v.feedback.text, meta=v.feedback.meta())
        else:
            safety_failed |= tv.safety_check is Check.Fail
            conv.user(reflection_feedback(tv), meta={"kind": "reflection", "outcome": "Rejected", "option": d.token})
        if log.retries >= cfg.retry_budget:
            break
        log.retries += 1
    fallback = BehaviorState.Abort if lc.state is BehaviorState.Attempt and safety_failed else lc.state
    graph.require(lc.state, fallback)
    v = _run_verify(verify_fn, Decision(fallback, "fallback after exhausted retries"), w, preds, cfg, log, lc.task)
    return v if v.approved else None


def _enter(lc: LaneChangeState, graph: StateMachineGraph, new: BehaviorState, log: DecisionCycleLog) -> None:
    graph.require(lc.state, new)
    log.from_state, log.to_state = lc.state.value, new.value
    lc.dwell = lc.dwell + 1 if new is BehaviorState.Attempt else 0
    lc.state = new


def case2_step_state(w: WorldState, preds, backend: Backend, lc: LaneChangeState, graph: StateMachineGraph,
                     cfg: BehaviorConfig, log: DecisionCycleLog, clock: _Clock,
                     verify_fn: VerifyFn = verify) -> Optional[Verdict]:
    """Decision half of a lane-change cycle: updates ``lc`` and returns the verdict to execute."""
    if lc.state is BehaviorState.Abort:
        # Abort only ever lasts one cycle, which is spent recentering
        graph.require(BehaviorState.Abort, BehaviorState.Stay)
        log.auto_transition = "Abort->Stay"
        lc.state = BehaviorState.Stay
    verdict = decide_case2(w, preds, backend, lc, graph, cfg, log, clock, verify_fn)
    if verdict is None:
        log.source = ActionSource.Failsafe.value
        _enter(lc, graph, lc.state, log)
        return None
    log.source = ActionSource.Planner.value
    log.executed = verdict.proposed.token
    _enter(lc, graph, verdict.proposed.choice, log)
    return verdict


def run_case2_cycle(sim: Simulation, backend: Backend, lc: LaneChangeState, graph: StateMachineGraph = StateMachineGraph(),
                    cfg: BehaviorConfig = BehaviorConfig(), n_steps: Optional[int] = None,
                    ) -> tuple[BehaviorState, list[ControlInput], DecisionCycleLog]:
    clock = _Clock()
    n = cfg.n_llm if n_steps is None else n_steps
    w = sim.world
    log = DecisionCycleLog(w.step_index, DecisionCase.Case2.value)
    verdict = case2_step_state(w, sim.predictions(), backend, lc, graph, cfg, log, clock)
    sim.behavior = lc.state.value
    if verdict is None:
        return lc.state, execute_failsafe(sim, n, cfg, log, clock), log
    return lc.state, execute_plan(sim, verdict, n, cfg, log, clock, lc.task), log
