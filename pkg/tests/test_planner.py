from dataclasses import replace

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from conftest import ROAD, agent, world
from safedrive.dynamics import ControlInput, VehicleParams, VehicleState, step
from safedrive.planner import (
    FailsafeConfig,
    MpcConfig,
    MpcProblem,
    MpcUsageError,
    OracleBoundError,
    PlanStatus,
    failsafe_control,
    find_leader,
    grid_oracle,
    rollout,
    solve_lane_conditioned,
    solve_naive_minlp,
    violations,
)
from safedrive.planner.oracle import enumerate_sequences
from safedrive.prediction import IntervalPrediction, predict_agent
from safedrive.world import LaneId

P = VehicleParams()
DT = 0.1


def blocker(agent_id, k, x_lo, x_hi, lane=LaneId.Middle):
    y = ROAD.center(lane)
    boxes = tuple((x_lo, x_hi, y - 0.2, y + 0.2) for _ in range(k))
    return IntervalPrediction(agent_id, boxes, (30.0,) * k, (30.0,) * k, 5.0)


def constant_rollout(s0, a, k):
    s = s0
    for _ in range(k):
        s = step(s, ControlInput(a, 0.0), DT, P)
    return s


# -- lane-conditioned solver -------------------------------------------------------


def test_empty_road_matches_constant_control_oracle():
    s0 = VehicleState(0, 6, 30, 0)
    p = MpcProblem(s0, 8, DT, LaneId.Middle)
    res = solve_lane_conditioned(p)
    assert res.status is PlanStatus.Feasible
    # constant controls on a fine accel grid (no smoothness cost, no lateral error)
    best_x = max(constant_rollout(s0, a, 8).x for a in np.linspace(P.a_min, P.a_max, 81))
    assert res.trajectory[-1].x >= 0.99 * best_x
    assert res.trajectory[-1].x <= best_x + 1e-6


def test_blocked_target_lane_is_infeasible():
    k = 3
    s0 = VehicleState(0, 6, 30, 0)
    p = MpcProblem(s0, k, DT, LaneId.Middle, (blocker(1, k, -5.0, 60.0),))
    res = solve_lane_conditioned(p)
    assert res.status is PlanStatus.Infeasible
    assert res.controls == ()
    assert res.diagnostics.worst.name in ("safety", "terminal_safety")
    assert res.diagnostics.worst.agent_id == 1
    oracle = grid_oracle(p, [-5, -2.5, 0, 1.5, 3], [-0.3, -0.15, 0, 0.15, 0.3])
    assert oracle.status is PlanStatus.Infeasible


@pytest.mark.parametrize("y0", [6.0, 5.7, 6.3])
def test_lateral_term_centres_the_ego(y0):
    p = MpcProblem(VehicleState(0, y0, 30, 0), 10, DT, LaneId.Middle)
    res = solve_lane_conditioned(p)
    assert res.feasible
    assert abs(res.trajectory[-1].y - 6.0) < 0.1


def test_lane_change_plan_commits():
    p = MpcProblem(VehicleState(0, 6, 30, 0), 10, DT, LaneId.Left)
    res = solve_lane_conditioned(p)
    assert res.feasible
    kc = p.cfg.commit_step(p.k)
    assert all(s.y < 4.0 for s in res.trajectory[kc - 1:])


def test_usage_errors():
    pred = blocker(1, 3, 50, 60)
    with pytest.raises(MpcUsageError):
        solve_lane_conditioned(MpcProblem(VehicleState(0, 6, 30, 0), 5, DT, LaneId.Middle, (pred,)))
    with pytest.raises(MpcUsageError):
        solve_lane_conditioned(MpcProblem(VehicleState(0, 6, 30, 0), 1, DT, LaneId.Middle))
    with pytest.raises(MpcUsageError):
        solve_lane_conditioned(MpcProblem(VehicleState(0, 6, 30, 0), 4, DT, LaneId.Middle,
                                          cfg=MpcConfig(k_commit=5)))
    with pytest.raises(MpcUsageError):
        solve_lane_conditioned(MpcProblem(VehicleState(0, 6, 30, 0), 4, DT, LaneId.Middle,
                                          warm_start=(ControlInput(0, 0),)))
    with pytest.raises(ValueError):
        MpcConfig(eps_feas=0)


def test_determinism():
    preds = (predict_agent(agent(1, 40.0, vx=25.0), 0, ROAD, 10, DT),)
    p = MpcProblem(VehicleState(0, 6, 30, 0), 10, DT, LaneId.Middle, preds)
    assert solve_lane_conditioned(p) == solve_lane_conditioned(p)


def test_warm_start_gives_feasible_plan():
    p = MpcProblem(VehicleState(0, 6, 30, 0), 10, DT, LaneId.Middle)
    first = solve_lane_conditioned(p)
    warm = solve_lane_conditioned(replace(p, warm_start=first.controls))
    assert warm.feasible and warm.objective == pytest.approx(first.objective, abs=1e-3)


def test_literal_form_admits_inside_interval():
    # the literal reading is satisfied by sitting inside a wide interval; the
    # disjunctive one is not
    k = 3
    pred = blocker(1, k, -30.0, 60.0)
    s0 = VehicleState(0, 6, 30, 0)
    literal = MpcProblem(s0, k, DT, LaneId.Middle, (pred,), cfg=MpcConfig(disjunctive=False, terminal_safe_stop=False))
    assert solve_lane_conditioned(literal).feasible
    assert not solve_lane_conditioned(replace(literal, cfg=MpcConfig())).feasible


def _random_problem(seed, k):
    rng = np.random.default_rng(seed)
    lane = LaneId(int(rng.integers(3)))
    s0 = VehicleState(0.0, ROAD.center(lane) + rng.uniform(-1, 1), rng.uniform(10, 38), 0.0)
    agents = [
        agent(j, rng.uniform(-40, 40), LaneId(int(rng.integers(3))), vx=rng.uniform(10, 38))
        for j in range(int(rng.integers(0, 4)))
    ]
    preds = tuple(predict_agent(a, 0, ROAD, k, DT) for a in agents)
    target = LaneId(int(rng.integers(3))) if rng.random() < 0.3 else lane
    return MpcProblem(s0, k, DT, target, preds)


@settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.integers(0, 2**31 - 1), st.integers(2, 10))
def test_feasible_plans_survive_resimulation(seed, k):
    p = _random_problem(seed, k)
    res = solve_lane_conditioned(p)
    if res.feasible:
        assert len(res.controls) == k
        assert all(v.magnitude <= p.cfg.eps_feas for v in violations(p, rollout(p, res.controls)))
        assert rollout(p, res.controls) == list(res.trajectory)


# -- oracle ----------------------------------------------------------------------


def test_oracle_counts_sequences():
    p = MpcProblem(VehicleState(0, 6, 30, 0), 2, DT, LaneId.Middle)
    res = grid_oracle(p, [-2, 0, 2], [-0.1, 0, 0.1])
    assert res.diagnostics.iterations == 81
    assert len(list(enumerate_sequences([-2, 0, 2], [-0.1, 0, 0.1], 2))) == 81
    assert res.feasible and res.controls[0].accel == 2


def test_oracle_bounds():
    with pytest.raises(OracleBoundError):
        grid_oracle(MpcProblem(VehicleState(0, 6, 30, 0), 5, DT, LaneId.Middle), [0], [0])
    with pytest.raises(OracleBoundError):
        grid_oracle(MpcProblem(VehicleState(0, 6, 30, 0), 2, DT, LaneId.Middle), range(6), [0])


@pytest.mark.parametrize("seed", range(12))
def test_solver_agrees_with_oracle(seed):
    p = _random_problem(seed, 2 + seed % 2)
    oracle = grid_oracle(p, [-5, -2.5, 0, 1.5, 3], [-0.3, -0.15, 0, 0.15, 0.3])
    res = solve_lane_conditioned(p)
    if oracle.feasible:
        assert res.feasible
        assert res.objective <= oracle.objective + 0.05 * abs(oracle.objective)
    if res.feasible:
        assert not [v for v in violations(p, res.trajectory) if v.magnitude > p.cfg.eps_feas]


# -- lane enumeration ------------------------------------------------------------


def test_minlp_empty_road_prefers_current_lane():
    p = MpcProblem(VehicleState(0, 6, 30, 0), 10, DT, LaneId.Middle)
    best, per_lane = solve_naive_minlp(p)
    assert all(r.feasible for r in per_lane.values())
    assert best is per_lane[LaneId.Middle]


def test_minlp_slow_leader():
    leader = predict_agent(agent(1, 25.0, LaneId.Middle, vx=15.0), 0, ROAD, 10, DT)
    p = MpcProblem(VehicleState(0, 6, 30, 0), 10, DT, LaneId.Middle, (leader,))
    best, per_lane = solve_naive_minlp(p)
    assert best is not per_lane[LaneId.Middle]
    assert not per_lane[LaneId.Middle].feasible
    # full braking is the best the ego can do behind the leader, and it still fails
    brake = [ControlInput(P.a_min, 0.0)] * 10
    assert violations(p, rollout(p, brake))
    assert all(best.objective <= r.objective for r in per_lane.values() if r.feasible)


def test_minlp_all_blocked():
    k = 10
    preds = tuple(blocker(i, k, -5.0, 60.0, lane) for i, lane in enumerate(LaneId))
    best, per_lane = solve_naive_minlp(MpcProblem(VehicleState(0, 6, 30, 0), k, DT, LaneId.Middle, preds))
    assert not any(r.feasible for r in per_lane.values())
    assert best is per_lane[LaneId.Middle]


# -- failsafe --------------------------------------------------------------------


def test_failsafe_no_leader_centred():
    assert failsafe_control(VehicleState(0, 6, 30, 0), None) == ControlInput(0.0, 0.0)


def test_failsafe_short_gap_brakes_hard():
    lead = (VehicleState(13, 6, 30, 0), P)  # 8 m bumper to bumper
    assert failsafe_control(VehicleState(0, 6, 30, 0), lead).accel == P.a_min


def test_failsafe_far_leader_same_speed():
    lead = (VehicleState(205, 6, 30, 0), P)
    assert failsafe_control(VehicleState(0, 6, 30, 0), lead).accel == pytest.approx(0.0, abs=0.1)


def test_failsafe_short_ttc_brakes_hard():
    lead = (VehicleState(40, 6, 10, 0), P)  # 35 m gap closing at 20 m/s
    assert failsafe_control(VehicleState(0, 6, 30, 0), lead).accel == P.a_min


def test_failsafe_steers_back_to_centre():
    u = failsafe_control(VehicleState(0, 7.0, 30, 0), None)
    assert u.steer < 0 and u.accel == 0.0


def test_find_leader_uses_lane_overlap():
    w = world(ego=(0, 6, 30, 0), agents=[agent(1, 50.0, LaneId.Left), agent(2, 80.0, LaneId.Middle)])
    assert find_leader(w)[0].x == 80.0


def _closed_loop(gap, v_e, v_l, decel, steps=200):
    ego = VehicleState(0.0, 6.0, v_e, 0.0)
    lead = VehicleState(gap + P.length, 6.0, v_l, 0.0)
    for _ in range(steps):
        u = failsafe_control(ego, (lead, P))
        ego = step(ego, u, DT, P)
        v = max(lead.vx - decel * DT, 0.0)
        dx = (lead.vx + v) / 2 * DT if lead.vx - decel * DT >= 0 else lead.vx**2 / (2 * decel)
        lead = VehicleState(lead.x + dx, 6.0, v, 0.0)
        if lead.x - ego.x < P.length:
            return False
    return True


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 40), st.floats(0, 40), st.floats(0, 5), st.floats(0, 60))
def test_failsafe_closed_loop_property(v_e, v_l, decel, extra):
    cfg = FailsafeConfig()
    gap = cfg.d_min + max(0.0, (v_e**2 - v_l**2) / (2 * -P.a_min)) + extra
    assert _closed_loop(gap, v_e, v_l, decel)
