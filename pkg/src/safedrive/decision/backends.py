"""Decision-maker backends: a deterministic heuristic and a chat-completion client."""

from __future__ import annotations

import enum
import math
import os
from dataclasses import dataclass
from typing import Callable, Optional

import httpx

from safedrive.decision.protocol import BehaviorState, Conversation, Role
from safedrive.decision.scene import SceneDescription
from safedrive.prediction import IntentionLabel
from safedrive.world import LaneId

GAP_CAP = 100.0  # m; lanes with more room than this score the same

Backend = Callable[[Conversation, SceneDescription], str]


class TransportError(RuntimeError):
    """The remote decision-maker could not be reached or answered garbage."""


class BackendKind(str, enum.Enum):
    Scripted = "Scripted"
    Remote = "Remote"


@dataclass(frozen=True)
class BackendConfig:
    kind: BackendKind = BackendKind.Scripted
    endpoint: Optional[str] = None
    model: str = "gpt-4"
    temperature: float = 0.0
    timeout: float = 30.0
    api_key_env: Optional[str] = "OPENAI_API_KEY"

    def __post_init__(self):
        if self.kind is BackendKind.Remote and not (self.endpoint and self.api_key_env):
            raise ValueError("remote backend needs an endpoint and an API-key variable name")
        if not self.timeout > 0:
            raise ValueError("timeout must be positive")


# -- scripted ------------------------------------------------------------------


def _rejected(conv: Conversation) -> list[str]:
    return [
        m.meta["option"]
        for m in conv.messages
        if m.role is Role.User and m.meta and m.meta.get("outcome") == "Rejected"
    ]


def _lane_choice(conv: Conversation, scene: SceneDescription) -> tuple[LaneId, str]:
    tried = set(_rejected(conv))
    current = scene.ego_lane
    untried = [lane for lane in LaneId if lane.label not in tried] or [current]

    def score(lane: LaneId) -> float:
        gap = scene.front_gap(lane)
        return GAP_CAP if math.isinf(gap) else min(gap, GAP_CAP)

    # reachable lanes first, then room ahead, then the current lane, then left to right
    best = min(
        untried,
        key=lambda lane: (abs(int(lane) - int(current)) > 1, -score(lane), lane != current, int(lane)),
    )
    reason = f"The {best.name.lower()} lane offers {score(best):.0f} m of free road ahead"
    if tried:
        reason += f"; already rejected: {', '.join(sorted(tried))}"
    return best, reason + "."


def _state_choice(conv: Conversation, scene: SceneDescription) -> tuple[BehaviorState, str]:
    c = scene.lane_change
    safe = c.ttc_now >= c.theta_ttc
    friendly = c.follower_id is None or c.follower_intention is IntentionLabel.Cooperative
    last = conv.last
    if last.role is Role.User and last.meta and last.meta.get("outcome") == "Rejected":
        # back off to the most conservative move available
        if c.state is BehaviorState.Attempt and BehaviorState.Abort in c.allowed:
            return BehaviorState.Abort, "The proposal was rejected; backing off."
        return c.state, "The proposal was rejected; holding the current state."
    if c.state is BehaviorState.Stay:
        if safe and friendly:
            return BehaviorState.Attempt, "The target lane looks safe and the follower is cooperative."
        return BehaviorState.Stay, "Waiting for a safe, cooperative gap."
    if c.state is BehaviorState.Attempt:
        if not (safe and friendly):
            return BehaviorState.Abort, "The follower is not yielding or the gap is unsafe."
        if c.attempt_dwell >= 2:
            return BehaviorState.Finish, "The follower has yielded; completing the change."
        return BehaviorState.Attempt, "Still watching the follower's reaction."
    if c.state is BehaviorState.Finish:
        return BehaviorState.Finish, "The lane change is complete."
    return BehaviorState.Stay, "Recentered in the source lane."


def scripted_backend(conv: Conversation, scene: SceneDescription) -> str:
    """Deterministic stand-in for the language model."""
    if scene.lane_change is None:
        lane, reason = _lane_choice(conv, scene)
        return f"{reason}\nDECISION: {lane.label}"
    state, reason = _state_choice(conv, scene)
    return f"{reason}\nDECISION: {state.value}"


# -- remote ----------------------------------------------------------------------


def _url(endpoint: str) -> str:
    endpoint = endpoint.rstrip("/")
    return endpoint if endpoint.endswith("/chat/completions") else endpoint + "/chat/completions"


def remote_backend(conv: Conversation, cfg: BackendConfig, client: Optional[httpx.Client] = None) -> str:
    key = os.environ.get(cfg.api_key_env or "")
    if not key:
        raise TransportError(f"environment variable {cfg.api_key_env} is not set")
    body = {"model": cfg.model, "temperature": cfg.temperature, "messages": conv.as_payload()}
    headers = {"Authorization": f"Bearer {key}"}
    try:
        if client is None:
            with httpx.Client(timeout=cfg.timeout) as c:
                resp = c.post(_url(cfg.endpoint), json=body, headers=headers)
        else:
            resp = client.post(_url(cfg.endpoint), json=body, headers=headers, timeout=cfg.timeout)
    except httpx.TimeoutException as exc:
        raise TransportError(f"request timed out after {cfg.timeout} s") from exc
    except httpx.HTTPError as exc:
        # the exception text carries the URL but never the headers
        raise TransportError(f"request failed: {type(exc).__name__}") from exc
    if resp.status_code != 200:
        raise TransportError(f"endpoint answered HTTP {resp.status_code}")
    try:
        text = resp.json()["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise TransportError("malformed completion body") from exc
    if not isinstance(text, str):
        raise TransportError("completion content is not text")
    return text


def make_backend(cfg: BackendConfig) -> Backend:
    if cfg.kind is BackendKind.Scripted:
        return scripted_backend
    return lambda conv, scene: remote_backend(conv, cfg)
