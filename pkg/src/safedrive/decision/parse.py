"""Strict ``DECISION: <token>`` line parser."""

from __future__ import annotations

import re

from safedrive.decision.protocol import BehaviorState, Decision, DecisionCase
from safedrive.world import LaneId


class DecisionParseError(ValueError):
    pass


class NoDecisionLine(DecisionParseError):
    pass


class MultipleDecisionLines(DecisionParseError):
    pass


class UnknownToken(DecisionParseError):
    pass


_LINE = re.compile(r"^\s*decision\s*:(.*)$", re.IGNORECASE)

_TOKENS = {
    DecisionCase.Case1: {lane.label.lower(): lane for lane in LaneId},
    DecisionCase.Case2: {state.value.lower(): state for state in BehaviorState},
}


def parse_decision(raw: str, expected: DecisionCase) -> Decision:
    lines = raw.splitlines()
    hits = [i for i, line in enumerate(lines) if _LINE.match(line)]
    if not hits:
        raise NoDecisionLine("no line of the form 'DECISION: <option>'")
    if len(hits) > 1:
        raise MultipleDecisionLines(f"{len(hits)} decision lines; exactly one is required")
    i = hits[0]
    token = " ".join(_LINE.match(lines[i]).group(1).split()).strip(" .").lower()
    table = _TOKENS[expected]
    if token not in table:
        options = ", ".join(k.title() for k in table)
        raise UnknownToken(f"unknown option {token!r}; expected one of {options}")
    return Decision(table[token], "\n".join(lines[:i]).strip())
