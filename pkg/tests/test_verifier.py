import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import ROAD, agent, world
from safedrive.decision.protocol import BehaviorState, Decision
from safedrive.dynamics import ControlInput, VehicleParams
from safedrive.planner import MpcUsageError, rollout
from safedrive.prediction import predict_all
from safedrive.verifier import (
    Outcome,
    VerifierConfig,
    feedback_for,
    problem_for,
    remaining_options,
    verify,
)
from safedrive.world import LaneId

L, M, R = LaneId.Left, LaneId.Middle, LaneId.Right


def test_empty_road_keep_lane_is_approved():
    w = world()
    v = verify(Decision(M), w, [])
    assert v.outcome is Outcome.Approved and v.approved
    assert "the verifier is happy with the proposed" in v.feedback.text
    assert "Middle Lane" in v.feedback.text


def test_approved_objective_matches_max_accel():
    w = world()
    v = verify(Decision(M), w, [])
    p = problem_for(Decision(M), w, [], VerifierConfig())
    top = rollout(p, [ControlInput(VehicleParams().a_max, 0.0)] * p.k)
    assert v.plan.trajectory[-1].x == pytest.approx(top[-1].x, rel=1e-3)


def test_blocked_lane_is_rejected_with_agent_id():
    # a stopped car 20 m ahead in the Middle lane
    w = world(agents=[agent(7, 25.0, M, vx=0.0, envelope=(-5.0, 0.0))])
    v = verify(Decision(M), w, predict_all(w, 10))
    assert v.outcome is Outcome.Rejected
    fb = v.feedback
    assert fb.agent_id == 7 and "vehicle 7" in fb.text
    assert fb.constraint in ("safety", "terminal_safety")
    assert "Please reconsider" in fb.text
    # structured fields mirror the planner diagnostics exactly
    worst = v.plan.diagnostics.worst
    assert (fb.constraint, fb.step, fb.magnitude, fb.agent_id) == (worst.name, worst.step, worst.magnitude, worst.agent_id)


def test_verifier_never_upgrades_infeasible():
    w = world(agents=[agent(7, 25.0, M, vx=0.0, envelope=(-5.0, 0.0))])
    v = verify(Decision(M), w, predict_all(w, 10))
    assert not v.plan.feasible and feedback_for(Decision(M), v.plan).outcome is Outcome.Rejected


def test_state_decisions_need_a_task():
    with pytest.raises(MpcUsageError):
        problem_for(Decision(BehaviorState.Stay), world(), [], VerifierConfig())
    with pytest.raises(MpcUsageError):
        problem_for(Decision("Left"), world(), [], VerifierConfig())


def test_state_setpoints():
    w, cfg, task = world(), VerifierConfig(), (M, L)
    stay = problem_for(Decision(BehaviorState.Stay), w, [], cfg, task)
    abort = problem_for(Decision(BehaviorState.Abort), w, [], cfg, task)
    finish = problem_for(Decision(BehaviorState.Finish), w, [], cfg, task)
    attempt = problem_for(Decision(BehaviorState.Attempt), w, [], cfg, task)
    assert stay.target_lane == abort.target_lane == M
    assert finish.target_lane == L
    assert attempt.y_ref == ROAD.boundary(M, L) == 4.0
    assert attempt.commit_band == (3.5, 4.5)


@pytest.mark.parametrize("rejected, current, expected", [
    ({L}, M, [M, R]),
    ({L, M, R}, M, []),
    (set(), M, [M, L, R]),
    (set(), L, [L, M, R]),
    (set(), R, [R, M, L]),
])
def test_remaining_options(rejected, current, expected):
    out = remaining_options([Decision(lane) for lane in rejected], current)
    assert [d.choice for d in out] == expected


@given(st.permutations(list(LaneId)), st.sampled_from(list(LaneId)))
def test_options_exhaust_after_three_rejections(order, current):
    rejected = []
    for lane in order:
        assert remaining_options(rejected, current)
        rejected.append(Decision(lane))
    assert remaining_options(rejected, current) == []
