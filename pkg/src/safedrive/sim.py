"""Closed-loop episode state: the world plus the monitors wrapped around it."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Optional

from safedrive.dynamics import ControlInput, VehicleState
from safedrive.prediction import IntervalPrediction, check_containment, predict_all
from safedrive.world import CollisionReport, ScenarioError, WorldState, check_collision, lane_of, world_step


class CollisionError(RuntimeError):
    def __init__(self, report: CollisionReport):
        super().__init__(f"ego collided with agent {report.agent_id} at step {report.step_index}")
        self.report = report


@dataclass(frozen=True)
class Fault:
    """Extra acceleration forced onto one agent from ``start`` on (test-only)."""

    agent_id: int
    accel: float
    start: int = 0


@dataclass(frozen=True)
class StepRecord:
    step_index: int  # index of the state the control was applied to
    ego: VehicleState
    control: ControlInput
    source: str  # "Planner" | "Failsafe"
    lane: int
    behavior: Optional[str]
    agents: tuple[tuple[int, float, float, float], ...]
    compute_s: float = 0.0
    decision_s: float = 0.0


class Simulation:
    """Owns the world; checks containment of every issued prediction and collisions."""

    def __init__(self, world: WorldState, k: int, sensing_range: float = 150.0, eps_y: float = 0.2,
                 fault: Optional[Fault] = None):
        for a in world.agents:
            lc = a.policy.lane_change
            if lc is not None and lc.signal_steps < k:
                raise ScenarioError(
                    f"agent {a.id} signals its lane change {lc.signal_steps} steps ahead; "
                    f"the prediction horizon needs at least {k}"
                )
        self.world = world
        self.k = k
        self.sensing_range = sensing_range
        self.eps_y = eps_y
        self.fault = fault
        self.records: list[StepRecord] = []
        self.behavior: Optional[str] = None
        self._issued: deque = deque()
        self._cache: Optional[tuple[int, list[IntervalPrediction]]] = None

    @property
    def step_index(self) -> int:
        return self.world.step_index

    def predictions(self) -> list[IntervalPrediction]:
        """Predictions for the current step; each is monitored until it expires."""
        w = self.world
        if self._cache is None or self._cache[0] != w.step_index:
            preds = predict_all(w, self.k, self.sensing_range, self.eps_y)
            self._cache = (w.step_index, preds)
            self._issued.append((w.step_index, preds))
        return self._cache[1]

    def advance(self, u: ControlInput, source: str, compute_s: float = 0.0, decision_s: float = 0.0) -> WorldState:
        """Apply ``u`` for one step; raises on containment breaks and collisions."""
        w = self.world
        self.predictions()
        agents = tuple((a.id, a.state.x, a.state.y, a.state.vx) for a in w.agents)
        self.records.append(StepRecord(
            w.step_index, w.ego, u, source, int(lane_of(w.ego.y, w.road)), self.behavior, agents, compute_s, decision_s,
        ))
        fault = None
        if self.fault is not None and w.step_index >= self.fault.start:
            fault = {self.fault.agent_id: self.fault.accel}
        self.world = world_step(w, u, fault)
        while self._issued and self._issued[0][0] < self.world.step_index - self.k:
            self._issued.popleft()
        for _, preds in self._issued:
            check_containment(self.world, preds)
        report = check_collision(self.world)
        if report is not None:
            raise CollisionError(report)
        return self.world
