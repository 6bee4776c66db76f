"""Plot-ready time series from a trace."""

from __future__ import annotations

import csv
import math
from pathlib import Path

from safedrive.harness.trace import read_trace

COLUMNS = ("step", "x", "y", "speed", "lane", "state", "source", "event")


def render_rows(trace: dict) -> list[dict]:
    events: dict[int, list[str]] = {}
    for c in trace["cycles"]:
        events.setdefault(c["step_index"], []).append("cycle")
        if c.get("auto_transition"):
            events[c["step_index"]].append("auto:" + c["auto_transition"])
        if c.get("source") == "Failsafe":
            events[c["step_index"]].append("failsafe")
        if c.get("mid_cycle_abort") is not None:
            events.setdefault(c["mid_cycle_abort"], []).append("mid_cycle_abort")
    rows = []
    for s in trace["steps"]:
        rows.append({
            "step": s["i"], "x": s["x"], "y": s["y"], "speed": math.hypot(s["vx"], s["vy"]),
            "lane": s["lane"], "state": s["state"] or "", "source": s["source"],
            "event": ";".join(events.get(s["i"], [])),
        })
    return rows


def render(trace_path, out_path) -> int:
    rows = render_rows(read_trace(trace_path))
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    return len(rows)
