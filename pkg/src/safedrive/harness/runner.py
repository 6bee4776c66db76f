"""Episode execution."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

from safedrive.behavior.engine import BehaviorConfig, DecisionCycleLog, LaneChangeState, run_case1_cycle, run_case2_cycle
from safedrive.behavior.graph import StateMachineGraph
from safedrive.decision.backends import Backend, BackendConfig, BackendKind
from safedrive.harness.trace import TRACE_SCHEMA, TraceWriter
from safedrive.planner.failsafe import FailsafeConfig
from safedrive.planner.mpc import MpcConfig
from safedrive.prediction import ContainmentViolation, MemoryBuffer
from safedrive.sim import CollisionError, Fault, Simulation
from safedrive.verifier import VerifierConfig
from safedrive.world import EnvelopeViolation, Scenario, ScenarioError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_COLLISION = 3
EXIT_CONTAINMENT = 4


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    case: int = 1
    steps: Optional[int] = None  # None -> the scenario's episode length
    behavior: BehaviorConfig = field(default_factory=BehaviorConfig)
    backend: BackendConfig = field(default_factory=BackendConfig)
    fault: Optional[Fault] = None

    def snapshot(self) -> dict:
        d = asdict(self)
        d["backend"].pop("api_key_env", None)
        return d


def _build(cls, data: dict, where: str):
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown {where} option(s): {', '.join(sorted(unknown))}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {where} options: {exc}") from exc


def config_from_dict(data: dict, base: RunConfig = RunConfig()) -> RunConfig:
    """Override defaults from a config file (sections: mpc, verifier, failsafe, behavior, backend)."""
    unknown = set(data) - {"mpc", "verifier", "failsafe", "behavior", "backend"}
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    b = base.behavior
    mpc = _build(MpcConfig, {**asdict(b.verifier.mpc), **data.get("mpc", {})}, "mpc")
    ver = {k: v for k, v in asdict(b.verifier).items() if k != "mpc"}
    ver = _build(VerifierConfig, {**ver, **data.get("verifier", {}), "mpc": mpc}, "verifier")
    fs = _build(FailsafeConfig, {**asdict(b.failsafe), **data.get("failsafe", {})}, "failsafe")
    beh = {k: v for k, v in asdict(b).items() if k not in ("verifier", "failsafe")}
    beh = _build(BehaviorConfig, {**beh, **data.get("behavior", {}), "verifier": ver, "failsafe": fs}, "behavior")
    be = {**asdict(base.backend), **data.get("backend", {})}
    be["kind"] = BackendKind(be["kind"])
    return replace(base, behavior=beh, backend=_build(BackendConfig, be, "backend"))


@dataclass
class EpisodeResult:
    exit_code: int
    status: str
    message: str
    sim: Simulation
    cycles: list[DecisionCycleLog]
    final_state: Optional[str] = None

    @property
    def collisions(self) -> int:
        return int(self.exit_code == EXIT_COLLISION)


def _step_record(r) -> dict:
    return {
        "type": "step", "i": r.step_index, "x": r.ego.x, "y": r.ego.y, "vx": r.ego.vx, "vy": r.ego.vy,
        "accel": r.control.accel, "steer": r.control.steer, "source": r.source, "lane": r.lane,
        "state": r.behavior, "agents": [list(a) for a in r.agents],
    }


def run_episode(scenario: Scenario, backend: Backend, cfg: RunConfig = RunConfig(),
                trace_path=None) -> EpisodeResult:
    steps = scenario.steps if cfg.steps is None else cfg.steps
    if cfg.case not in (1, 2):
        raise ConfigError(f"case must be 1 or 2, got {cfg.case}")
    if cfg.case == 2 and scenario.task is None:
        raise ConfigError(f"scenario {scenario.name!r} defines no lane-change task")
    try:
        sim = Simulation(scenario.world, cfg.behavior.verifier.k, cfg.behavior.perception_range, fault=cfg.fault)
    except ScenarioError as exc:
        raise ConfigError(str(exc)) from exc
    graph = StateMachineGraph()
    lc = None
    if cfg.case == 2:
        lc = LaneChangeState(*scenario.task, memory=MemoryBuffer(cfg.behavior.memory_capacity))
        sim.behavior = lc.state.value

    writer = TraceWriter(trace_path) if trace_path is not None else None
    if writer:
        writer.write({
            "type": "header", "schema": TRACE_SCHEMA, "scenario": scenario.name,
            "scenario_sha256": scenario.digest, "seed": scenario.world.rng_seed, "case": cfg.case,
            "steps": steps, "config": cfg.snapshot(),
        })
    cycles: list[DecisionCycleLog] = []
    flushed = 0
    status, code, message = "ok", EXIT_OK, ""

    def flush():
        nonlocal flushed
        if not writer:
            return
        for r in sim.records[flushed:]:
            writer.write(_step_record(r))
            writer.timing({"type": "step", "i": r.step_index, "compute_s": r.compute_s, "decision_s": r.decision_s})
        flushed = len(sim.records)

    try:
        while sim.step_index < steps:
            n = min(cfg.behavior.n_llm, steps - sim.step_index)
            if cfg.case == 1:
                _, log = run_case1_cycle(sim, backend, cfg.behavior, n)
            else:
                _, _, log = run_case2_cycle(sim, backend, lc, graph, cfg.behavior, n)
            cycles.append(log)
            flush()
            if writer:
                writer.write({"type": "cycle", **log.to_dict()})
                writer.timing({"type": "cycle", "cycle": log.step_index, "backend_latency": log.backend_latency})
    except CollisionError as exc:
        status, code, message = "collision", EXIT_COLLISION, str(exc)
    except (ContainmentViolation, EnvelopeViolation) as exc:
        status, code, message = "containment", EXIT_CONTAINMENT, str(exc)
    finally:
        flush()
    result = EpisodeResult(code, status, message, sim, cycles, lc.state.value if lc else None)
    if writer:
        writer.write({
            "type": "summary", "exit_code": code, "status": status, "message": message,
            "steps": len(sim.records), "cycles": len(cycles), "collisions": result.collisions,
            "final_state": result.final_state,
            "final_ego": [sim.world.ego.x, sim.world.ego.y, sim.world.ego.vx, sim.world.ego.vy],
        })
        writer.close()
    return result
