"""Line-delimited JSON episode traces.

Timing depends on the machine, so it goes to a ``.timing.jsonl`` sidecar and
the trace itself stays byte-identical across runs.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, is_dataclass
from pathlib import Path
from typing import Iterator, Optional

TRACE_SCHEMA = 1


class TraceError(ValueError):
    pass


def _default(obj):
    if isinstance(obj, enum.Enum):
        return obj.value
    if is_dataclass(obj):
        return asdict(obj)
    if isinstance(obj, (set, frozenset, tuple)):
        return list(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _clean(obj):
    # JSON has no infinity; encode it as null
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def dumps(record: dict) -> str:
    return json.dumps(_clean(json.loads(json.dumps(record, default=_default))), sort_keys=True, separators=(",", ":"))


def timing_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".timing.jsonl") if p.suffix != ".jsonl" else p.with_suffix(".timing.jsonl")


class TraceWriter:
    """Appends records as they happen so a crash still leaves a readable prefix."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w", encoding="utf-8")
        self._timing = open(timing_path(self.path), "w", encoding="utf-8")

    def write(self, record: dict) -> None:
        self._fh.write(dumps(record) + "\n")

    def timing(self, record: dict) -> None:
        self._timing.write(dumps(record) + "\n")

    def close(self) -> None:
        self._fh.close()
        self._timing.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_records(path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TraceError(f"{path}: record {i} is not valid JSON ({exc.msg})") from exc
            if not isinstance(rec, dict) or "type" not in rec:
                raise TraceError(f"{path}: record {i} has no type")
            yield rec


def read_trace(path) -> dict:
    """Split a trace into header, steps, cycles and summary, validating structure."""
    header, steps, cycles, summary = None, [], [], None
    for i, rec in enumerate(read_records(path)):
        kind = rec["type"]
        if i == 0:
            if kind != "header":
                raise TraceError(f"{path}: record 0 must be the header")
            header = rec
        elif kind == "step":
            if rec.get("i") != len(steps):
                raise TraceError(f"{path}: record {i} breaks the step sequence (expected step {len(steps)})")
            steps.append(rec)
        elif kind == "cycle":
            cycles.append(rec)
        elif kind == "summary":
            summary = rec
        else:
            raise TraceError(f"{path}: record {i} has unknown type {kind!r}")
    if header is None:
        raise TraceError(f"{path}: empty trace")
    return {"header": header, "steps": steps, "cycles": cycles, "summary": summary}


def read_timing(path) -> Optional[list[dict]]:
    p = timing_path(path)
    if not p.exists():
        return None
    return list(read_records(p))
