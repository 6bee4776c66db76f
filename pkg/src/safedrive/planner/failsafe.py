"""Lane-keeping brake controller used when every behavior is rejected."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

from safedrive.dynamics import ControlInput, VehicleParams, VehicleState
from safedrive.prediction import Relation, compute_ttc
from safedrive.world import RoadGeometry, WorldState, lane_of


@dataclass(frozen=True)
class FailsafeConfig:
    d_min: float = 10.0  # bumper-to-bumper distance to hold (m)
    theta_fs: float = 2.0  # TTC below which to brake hard (s)
    leader_brake: float = 5.0  # worst leader deceleration assumed (m/s^2)
    lateral_rate: float = 1.5  # lateral error decay (1/s)
    heading_gain: float = 0.5  # fraction of heading error removed per step
    max_heading: float = 0.15  # rad


def find_leader(w: WorldState) -> Optional[tuple[VehicleState, VehicleParams]]:
    """Closest agent ahead whose body overlaps the ego's lane laterally."""
    ego, road = w.ego, w.road
    lane = lane_of(ego.y, road)
    lo, hi = road.band(lane)
    best = None
    for a in w.agents:
        s = a.state
        if s.x <= ego.x:
            continue
        if s.y + a.params.width / 2 <= lo or s.y - a.params.width / 2 >= hi:
            continue
        if best is None or s.x < best[0].x:
            best = (s, a.params)
    return best


def _steer_to_center(ego: VehicleState, y_center: float, dt: float, cfg: FailsafeConfig, p: VehicleParams) -> float:
    v = max(ego.speed, 5.0)
    psi = ego.heading if ego.speed > 1e-6 else 0.0
    psi_des = min(max(cfg.lateral_rate * (y_center - ego.y) / v, -cfg.max_heading), cfg.max_heading)
    # heading changes by roughly v / (lf + lr) * steer * dt per step
    steer = cfg.heading_gain * (psi_des - psi) * (p.lf + p.lr) / (v * dt)
    return min(max(steer, p.steer_min), p.steer_max)


def failsafe_control(
    ego: VehicleState,
    leader: Optional[tuple[VehicleState, VehicleParams]],
    cfg: FailsafeConfig = FailsafeConfig(),
    params: VehicleParams = VehicleParams(),
    road: RoadGeometry = RoadGeometry(),
    dt: float = 0.1,
) -> ControlInput:
    """Keep the current lane and brake to hold ``d_min`` behind the leader.

    Hard braking when the gap is already short, the TTC is short, or the ego
    could no longer stop behind a leader braking at ``leader_brake``.
    Otherwise the constant deceleration that matches the leader's speed at
    ``d_min``; never accelerates and never leaves the lane.
    """
    steer = _steer_to_center(ego, road.center(lane_of(ego.y, road)), dt, cfg, params)
    if leader is None:
        return ControlInput(0.0, steer)
    lead, lead_params = leader
    half = (params.length + lead_params.length) / 2
    gap = lead.x - ego.x - half
    v_e, v_l = max(ego.vx, 0.0), max(lead.vx, 0.0)
    ttc = compute_ttc(ego, lead, Relation.LeaderSameLane, half)
    stop_gap = gap + v_l**2 / (2 * cfg.leader_brake) - v_e**2 / (2 * -params.a_min)
    if gap <= cfg.d_min or ttc < cfg.theta_fs or stop_gap < cfg.d_min:
        return ControlInput(params.a_min, steer)
    accel = min(0.0, (v_l**2 - v_e**2) / (2 * (gap - cfg.d_min)))
    if math.isclose(accel, 0.0, abs_tol=1e-12):
        accel = 0.0
    return ControlInput(max(accel, params.a_min), steer)
