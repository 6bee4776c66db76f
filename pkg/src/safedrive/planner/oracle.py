"""Exhaustive grid search over control sequences (test oracle).

Deliberately shares nothing with the optimiser beyond the dynamics and the
problem definition: the constraint check below is written out longhand.
"""

from __future__ import annotations

import itertools
import math
from typing import Sequence

from safedrive.dynamics import ControlInput, step
from safedrive.planner.mpc import Diagnostics, MpcProblem, PlanResult, PlanStatus, Violation

MAX_K = 4
MAX_GRID = 5


class OracleBoundError(ValueError):
    pass


def _lane_span(lo: float, hi: float, lane_width: float, n_lanes: int) -> range:
    first = min(max(math.floor(lo / lane_width), 0), n_lanes - 1)
    last = min(max(math.floor(hi / lane_width), 0), n_lanes - 1)
    return range(first, last + 1)


def _worst(p: MpcProblem, traj) -> tuple[float, Violation | None]:
    road, cfg, par = p.road, p.cfg, p.params
    w, n = road.lane_width, road.n_lanes
    L = cfg.L_safe
    lo, hi = p.band
    kc = cfg.commit_step(p.k)
    worst, where = 0.0, None

    def note(mag, name, i, agent=None):
        nonlocal worst, where
        if mag > worst:
            worst, where = mag, Violation(name, i, mag, agent)

    for i, s in enumerate(traj, start=1):
        note(road.y_inf - s.y, "road_boundary", i)
        note(s.y - road.y_sup, "road_boundary", i)
        if i >= kc:
            note(lo - s.y, "lane_commitment", i)
            note(s.y - hi, "lane_commitment", i)
        mine = set(_lane_span(s.y - par.width / 2, s.y + par.width / 2, w, n)) | {int(p.target_lane)}
        for pred in p.predictions:
            x_lo, x_hi, y_lo, y_hi = pred.boxes[i - 1]
            theirs = set(_lane_span(y_lo - pred.width / 2, y_hi + pred.width / 2, w, n))
            if not mine & theirs:
                continue
            if not cfg.disjunctive:
                note(max(L - abs(s.x - x_lo), L - abs(s.x - x_hi)), "safety", i, pred.agent_id)
                continue
            behind = s.x - (x_lo - L)  # > 0 means violated
            ahead = (x_hi + L) - s.x
            if i == p.k and cfg.terminal_safe_stop:
                behind = max(behind, -_behind_slack(p, pred, s))
                ahead = max(ahead, -_ahead_slack(p, pred, s))
            note(min(behind, ahead), "safety", i, pred.agent_id)
    return worst, where


def _behind_slack(p, pred, s) -> float:
    b_e, b_a = -p.params.a_min, pred.brake
    v_e, v_a = math.hypot(s.vx, s.vy), pred.speed_lo[-1]
    gap = pred.boxes[-1][0] - p.cfg.L_safe - s.x
    out = math.inf
    if b_a > 0:
        out = min(out, gap + v_a * v_a / (2 * b_a) - v_e * v_e / (2 * b_e))
    if b_e > b_a:
        out = min(out, gap - max(0.0, v_e - v_a) ** 2 / (2 * (b_e - b_a)))
    return out


def _ahead_slack(p, pred, s) -> float:
    b_e, b_a = -p.params.a_min, pred.brake
    if b_a <= 0:
        return math.inf
    v_e, v_a = math.hypot(s.vx, s.vy), pred.speed_hi[-1]
    gap = s.x - pred.boxes[-1][1] - p.cfg.L_safe - v_a * p.dt
    out = gap + v_e * v_e / (2 * b_e) - v_a * v_a / (2 * b_a)
    if b_a > b_e:
        out = min(out, gap - max(0.0, v_a - v_e) ** 2 / (2 * (b_a - b_e)))
    return out


def _cost(p: MpcProblem, controls, traj) -> float:
    c = -traj[-1].x
    for a, b in zip(controls, controls[1:]):
        c += p.cfg.w_smooth * math.sqrt((b.accel - a.accel) ** 2 + (b.steer - a.steer) ** 2)
    ref = p.road.center(p.target_lane) if p.y_ref is None else p.y_ref
    return c + p.cfg.w_lat * (traj[-1].y - ref) ** 2


def grid_oracle(p: MpcProblem, accel_grid: Sequence[float], steer_grid: Sequence[float]) -> PlanResult:
    """Best feasible grid sequence; ``diagnostics.iterations`` counts sequences tried."""
    p.validate()
    if p.k > MAX_K or len(accel_grid) > MAX_GRID or len(steer_grid) > MAX_GRID:
        raise OracleBoundError(f"grid oracle limited to k<={MAX_K} and {MAX_GRID}x{MAX_GRID} grids")
    grid = [ControlInput(a, d) for a in accel_grid for d in steer_grid]
    best = None  # (cost, controls, traj)
    least_bad = None  # (violation, where, controls, traj)
    count = 0

    # depth-first so that prefixes are simulated once
    def expand(prefix, traj, s):
        nonlocal best, least_bad, count
        if len(prefix) == p.k:
            count += 1
            mag, where = _worst(p, traj)
            if mag <= p.cfg.eps_feas:
                cost = _cost(p, prefix, traj)
                if best is None or cost < best[0]:
                    best = (cost, list(prefix), list(traj))
            elif least_bad is None or mag < least_bad[0]:
                least_bad = (mag, where, list(prefix), list(traj))
            return
        for u in grid:
            nxt = step(s, u, p.dt, p.params)
            expand(prefix + [u], traj + [nxt], nxt)

    expand([], [], p.s0)
    if best is not None:
        cost, controls, traj = best
        return PlanResult(PlanStatus.Feasible, tuple(controls), tuple(traj), Diagnostics(None, count, cost, 0.0))
    mag, where, controls, traj = least_bad
    return PlanResult(
        PlanStatus.Infeasible, (), tuple(traj), Diagnostics(where, count, _cost(p, controls, traj), mag)
    )


def enumerate_sequences(grid_a: Sequence[float], grid_d: Sequence[float], k: int):
    """All control sequences on the grid, in the oracle's order."""
    grid = [ControlInput(a, d) for a in grid_a for d in grid_d]
    return itertools.product(grid, repeat=k)
