import json
import math

import httpx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import agent, world
from safedrive.behavior.graph import DEFAULT_EDGES, StateMachineGraph
from safedrive.decision.backends import (
    BackendConfig,
    BackendKind,
    TransportError,
    remote_backend,
    scripted_backend,
)
from safedrive.decision.parse import (
    DecisionParseError,
    MultipleDecisionLines,
    NoDecisionLine,
    UnknownToken,
    parse_decision,
)
from safedrive.decision.prompts import DEMO_HISTORIES, build_system_prompt
from safedrive.decision.protocol import BehaviorState, Conversation, DecisionCase, Role
from safedrive.decision.scene import LaneChangeContext, describe_scene
from safedrive.prediction import IntentionLabel, predict_all
from safedrive.world import LaneChange, LaneId

C1, C2 = DecisionCase.Case1, DecisionCase.Case2


# -- parser ----------------------------------------------------------------------


@pytest.mark.parametrize("raw, choice", [
    ("I'll keep going.\nDECISION: Middle Lane", LaneId.Middle),
    ("decision:   left   lane.", LaneId.Left),
    ("  Decision : RIGHT LANE", LaneId.Right),
])
def test_parse_lanes(raw, choice):
    assert parse_decision(raw, C1).choice is choice


def test_parse_keeps_rationale():
    d = parse_decision("Room ahead.\nDECISION: Attempt", C2)
    assert d.choice is BehaviorState.Attempt and d.rationale == "Room ahead."


@pytest.mark.parametrize("raw, err", [
    ("Middle Lane", NoDecisionLine),
    ("", NoDecisionLine),
    ("DECISION: Left Lane\nDECISION: Right Lane", MultipleDecisionLines),
    ("DECISION: Fast Lane", UnknownToken),
    ("DECISION: Attempt", UnknownToken),  # a state is not a lane
])
def test_parse_errors(raw, err):
    with pytest.raises(err):
        parse_decision(raw, C1)


@settings(max_examples=500)
@given(st.text())
def test_parser_never_crashes(raw):
    for case in (C1, C2):
        try:
            d = parse_decision(raw, case)
        except DecisionParseError:
            continue
        assert (case is C1) == d.is_lane


# -- scene -----------------------------------------------------------------------


def test_scene_phrases():
    w = world(agents=[agent(1, 40.0, LaneId.Middle, vx=20.0), agent(2, -30.0, LaneId.Left, vx=35.0)])
    scene = describe_scene(w, predict_all(w, 10))
    assert "The ego is driving in the middle lane at 30.0 m/s." in scene.text
    assert "Vehicle 1 is in front of the ego in the middle lane, 35.0 m away, driving slower than the ego" in scene.text
    assert "time to collision approximately 3.5 seconds" in scene.text
    assert "Vehicle 2 is behind the ego in the left lane" in scene.text
    assert "The right lane is clear within 150 m." in scene.text
    assert scene.front_gap(LaneId.Middle) == pytest.approx(35.0)
    assert math.isinf(scene.front_gap(LaneId.Right))


def test_scene_range_filter_and_empty_road():
    w = world(agents=[agent(1, 400.0)])
    scene = describe_scene(w)
    assert scene.facts == ()
    assert "All lanes are clear within 150 m." in scene.text


def test_scene_mentions_signalled_lane_change():
    lc = LaneChange(start_step=20, target_lane=LaneId.Left, signal_steps=20)
    w = world(agents=[agent(1, 60.0, LaneId.Middle, lane_change=lc)])
    assert "It may move into the left lane." in describe_scene(w, predict_all(w, 10)).text


def test_scene_lane_change_context():
    ctx = LaneChangeContext(BehaviorState.Attempt, (BehaviorState.Attempt, BehaviorState.Finish, BehaviorState.Abort),
                            LaneId.Right, LaneId.Middle, 5.0, 3.0, 4, (4.0, 4.2, 4.5), IntentionLabel.Cooperative, 1)
    text = describe_scene(world(), lane_change=ctx).text
    assert "Current state: Attempt. Allowed next states: Attempt, Finish, Abort." in text
    assert "TTC history (oldest first) [4.0, 4.2, 4.5] s, estimated intention Cooperative." in text


def test_scene_is_deterministic():
    w = world(agents=[agent(i, 30.0 * i, LaneId(i % 3)) for i in range(1, 5)])
    assert describe_scene(w, predict_all(w, 10)) == describe_scene(w, predict_all(w, 10))


# -- prompts ---------------------------------------------------------------------


def test_lane_change_prompt_lists_edges():
    text = build_system_prompt(C2, DEFAULT_EDGES)
    edges = [line for line in text.splitlines() if "->" in line and line.startswith("- ") and "TTC" not in line]
    assert len(edges) == 7
    assert "- Stay -> Attempt" in edges and "- Abort -> Stay" in edges
    assert "- TTC [6.0, 4.5, 3.0] s -> Aggressive" in text
    assert "- TTC [4.0, 4.2, 4.5] s -> Cooperative" in text
    assert text.count("- TTC [") == len(DEMO_HISTORIES)
    assert build_system_prompt(C2, DEFAULT_EDGES) == text
    assert build_system_prompt(C2, reversed(sorted(DEFAULT_EDGES))) == text


def test_lane_prompt_lists_options():
    text = build_system_prompt(C1)
    assert "Left Lane, Middle Lane, Right Lane" in text
    assert text.rstrip().endswith("Left Lane, Middle Lane, Right Lane.")
    with pytest.raises(ValueError):
        build_system_prompt(C2)


# -- scripted backend ------------------------------------------------------------


def test_scripted_prefers_room_ahead():
    w = world(agents=[agent(1, 30.0, LaneId.Middle, vx=20.0)])
    scene = describe_scene(w, predict_all(w, 10))
    d = parse_decision(scripted_backend(Conversation("sys"), scene), C1)
    assert d.choice is LaneId.Left  # left and right tie; leftmost wins


def test_scripted_keeps_clear_lane():
    scene = describe_scene(world())
    assert parse_decision(scripted_backend(Conversation("sys"), scene), C1).choice is LaneId.Middle


def test_scripted_skips_rejected_lanes():
    scene = describe_scene(world())
    conv = Conversation("sys")
    conv.user("no", meta={"outcome": "Rejected", "option": "Middle Lane"})
    conv.user("no", meta={"outcome": "Rejected", "option": "Left Lane"})
    assert parse_decision(scripted_backend(conv, scene), C1).choice is LaneId.Right


def _ctx(state, ttc=8.0, intention=IntentionLabel.Cooperative, dwell=0, follower=3):
    return LaneChangeContext(state, StateMachineGraph().successors(state), LaneId.Right, LaneId.Middle,
                             ttc, 3.0, follower, (), intention, dwell)


@pytest.mark.parametrize("ctx, expected", [
    (_ctx(BehaviorState.Stay), BehaviorState.Attempt),
    (_ctx(BehaviorState.Stay, ttc=2.0), BehaviorState.Stay),
    (_ctx(BehaviorState.Stay, intention=IntentionLabel.Aggressive), BehaviorState.Stay),
    (_ctx(BehaviorState.Stay, intention=None, follower=None), BehaviorState.Attempt),
    (_ctx(BehaviorState.Attempt, dwell=1), BehaviorState.Attempt),
    (_ctx(BehaviorState.Attempt, dwell=2), BehaviorState.Finish),
    (_ctx(BehaviorState.Attempt, intention=IntentionLabel.Aggressive), BehaviorState.Abort),
    (_ctx(BehaviorState.Finish), BehaviorState.Finish),
])
def test_scripted_state_choice(ctx, expected):
    scene = describe_scene(world(), lane_change=ctx)
    assert parse_decision(scripted_backend(Conversation("sys"), scene), C2).choice is expected


# -- remote backend --------------------------------------------------------------


CFG = BackendConfig(kind=BackendKind.Remote, endpoint="http://llm.test/v1", api_key_env="SAFEDRIVE_TEST_KEY")


def _client(handler):
    return httpx.Client(transport=httpx.MockTransport(handler))


def test_remote_echo(monkeypatch):
    monkeypatch.setenv("SAFEDRIVE_TEST_KEY", "sk-test")
    seen = {}

    def handler(req):
        seen["url"] = str(req.url)
        seen["auth"] = req.headers["authorization"]
        seen["body"] = json.loads(req.content)
        return httpx.Response(200, json={"choices": [{"message": {"content": "ok\nDECISION: Left Lane"}}]})

    conv = Conversation("sys")
    conv.user("scene")
    out = remote_backend(conv, CFG, _client(handler))
    assert parse_decision(out, C1).choice is LaneId.Left
    assert seen["url"] == "http://llm.test/v1/chat/completions"
    assert seen["auth"] == "Bearer sk-test"
    assert seen["body"]["messages"] == [{"role": "system", "content": "sys"}, {"role": "user", "content": "scene"}]
    assert seen["body"]["temperature"] == 0.0


@pytest.mark.parametrize("handler", [
    lambda req: httpx.Response(500, text="boom"),
    lambda req: httpx.Response(200, json={"nothing": 1}),
    lambda req: httpx.Response(200, text="not json"),
])
def test_remote_errors_become_transport_errors(monkeypatch, handler):
    monkeypatch.setenv("SAFEDRIVE_TEST_KEY", "sk-test")
    with pytest.raises(TransportError):
        remote_backend(Conversation("sys"), CFG, _client(handler))


def test_remote_timeout(monkeypatch):
    monkeypatch.setenv("SAFEDRIVE_TEST_KEY", "sk-test")

    def handler(req):
        raise httpx.ReadTimeout("slow", request=req)

    with pytest.raises(TransportError, match="timed out"):
        remote_backend(Conversation("sys"), CFG, _client(handler))


def test_remote_missing_key(monkeypatch):
    monkeypatch.delenv("SAFEDRIVE_TEST_KEY", raising=False)
    with pytest.raises(TransportError):
        remote_backend(Conversation("sys"), CFG, _client(lambda req: httpx.Response(200)))


def test_backend_config_validation():
    with pytest.raises(ValueError):
        BackendConfig(kind=BackendKind.Remote)
    with pytest.raises(ValueError):
        BackendConfig(timeout=0)


def test_conversation_has_one_system_message():
    conv = Conversation("sys")
    with pytest.raises(ValueError):
        conv.add(Role.System, "again")
    conv.user("a")
    conv.assistant("b")
    assert [m["role"] for m in conv.as_payload()] == ["system", "user", "assistant"]
