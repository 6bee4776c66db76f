"""Safety, performance and latency figures computed from traces alone."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from safedrive.harness.trace import TraceError, read_timing, read_trace


@dataclass(frozen=True)
class MetricsReport:
    trials: int
    steps: int
    collisions: int
    containment_violations: int
    mean_speed: float
    std_speed: float
    planner_feasible_rate: float
    failsafe_steps: int
    decision_cycles: int
    decision_requests: int
    retries: int
    latency_mean: Optional[float] = None  # per control step, backend excluded (s)
    latency_std: Optional[float] = None
    decision_latency_mean: Optional[float] = None  # per backend request (s)

    def as_dict(self) -> dict:
        return asdict(self)

    def table(self) -> str:
        def fmt(v, unit=""):
            return "n/a" if v is None else f"{v:.4g}{unit}"

        rows = [
            ("Safety", f"{self.collisions} collision(s), {self.containment_violations} containment violation(s) "
                       f"over {self.steps} control steps in {self.trials} trial(s)"),
            ("Performance", f"speed {self.mean_speed:.1f} (+-{self.std_speed:.1f}) m/s"),
            ("Latency", f"{fmt(self.latency_mean, ' s')} (+-{fmt(self.latency_std, ' s')}) per control step, "
                        f"{fmt(self.decision_latency_mean, ' s')} per decision request"),
            ("Planner", f"feasible rate {self.planner_feasible_rate:.3f}, {self.failsafe_steps} failsafe step(s)"),
            ("Decisions", f"{self.decision_cycles} cycle(s), {self.decision_requests} request(s), {self.retries} retry(ies)"),
        ]
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{name:<{width}}  {text}" for name, text in rows)


def metrics_from_traces(traces: Sequence[dict], timings: Optional[Sequence[Optional[list]]] = None) -> MetricsReport:
    if not traces:
        raise TraceError("no traces given")
    schemas = {t["header"].get("schema") for t in traces}
    if len(schemas) != 1:
        raise TraceError(f"traces mix schema versions {sorted(map(str, schemas))}")
    speeds = [math.hypot(s["vx"], s["vy"]) for t in traces for s in t["steps"]]
    cycles = [c for t in traces for c in t["cycles"]]
    solves = sum(c["solves"] for c in cycles)
    summaries = [t["summary"] or {} for t in traces]

    lat, dec = None, None
    if timings is not None and all(tm is not None for tm in timings):
        per_step = [r["compute_s"] for tm in timings for r in tm if "compute_s" in r]
        per_req = [x for tm in timings for r in tm if "backend_latency" in r for x in r["backend_latency"]]
        lat = (float(np.mean(per_step)), float(np.std(per_step))) if per_step else None
        dec = float(np.mean(per_req)) if per_req else None

    return MetricsReport(
        trials=len(traces),
        steps=len(speeds),
        collisions=sum(s.get("status") == "collision" for s in summaries),
        containment_violations=sum(s.get("status") == "containment" for s in summaries),
        mean_speed=float(np.mean(speeds)) if speeds else 0.0,
        std_speed=float(np.std(speeds)) if speeds else 0.0,
        planner_feasible_rate=sum(c["feasible_solves"] for c in cycles) / solves if solves else 0.0,
        failsafe_steps=sum(s["source"] == "Failsafe" for t in traces for s in t["steps"]),
        decision_cycles=len(cycles),
        decision_requests=sum(c["requests"] for c in cycles),
        retries=sum(c["retries"] for c in cycles),
        latency_mean=lat[0] if lat else None,
        latency_std=lat[1] if lat else None,
        decision_latency_mean=dec,
    )


def evaluate_paths(paths) -> MetricsReport:
    traces = [read_trace(p) for p in paths]
    return metrics_from_traces(traces, [read_timing(p) for p in paths])
