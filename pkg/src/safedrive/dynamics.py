"""Kinematic bicycle model on the public state ``(x, y, vx, vy)``.

The simulator and the MPC constraint set share :func:`step`, so the planner's
re-simulation check runs exactly the model the world uses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# below this speed the heading is held (atan2 of a zero vector is meaningless)
STANDSTILL_SPEED = 1e-6


class DynamicsError(ValueError):
    """Non-finite state or a control outside the vehicle's bounds."""


@dataclass(frozen=True)
class VehicleState:
    x: float  # longitudinal position (m)
    y: float  # lateral position (m)
    vx: float  # longitudinal speed (m/s)
    vy: float  # lateral speed (m/s)

    @property
    def speed(self) -> float:
        return math.hypot(self.vx, self.vy)

    @property
    def heading(self) -> float:
        return math.atan2(self.vy, self.vx)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.vx, self.vy])

    @classmethod
    def from_array(cls, arr) -> "VehicleState":
        return cls(float(arr[0]), float(arr[1]), float(arr[2]), float(arr[3]))


@dataclass(frozen=True)
class ControlInput:
    accel: float  # longitudinal acceleration (m/s^2)
    steer: float  # front-wheel steering angle (rad)


@dataclass(frozen=True)
class VehicleParams:
    length: float = 5.0
    width: float = 2.0
    lf: float = 2.5
    lr: float = 2.5
    a_min: float = -5.0
    a_max: float = 3.0
    steer_min: float = -0.3
    steer_max: float = 0.3
    v_max: float = 40.0

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0 and self.lf > 0 and self.lr > 0):
            raise ValueError("vehicle geometry must be positive")
        if not (self.a_min < 0 < self.a_max):
            raise ValueError("need a_min < 0 < a_max")
        if not (self.steer_min < 0 < self.steer_max):
            raise ValueError("need steer_min < 0 < steer_max")
        if not self.v_max > 0:
            raise ValueError("v_max must be positive")

    def clip(self, u: ControlInput) -> ControlInput:
        return ControlInput(
            min(max(u.accel, self.a_min), self.a_max),
            min(max(u.steer, self.steer_min), self.steer_max),
        )


def _check(s: VehicleState, u: ControlInput, dt: float, p: VehicleParams) -> None:
    if not all(math.isfinite(v) for v in (s.x, s.y, s.vx, s.vy)):
        raise DynamicsError(f"non-finite state {s}")
    if not (math.isfinite(u.accel) and math.isfinite(u.steer)):
        raise DynamicsError(f"non-finite control {u}")
    if not (p.a_min <= u.accel <= p.a_max):
        raise DynamicsError(f"accel {u.accel} outside [{p.a_min}, {p.a_max}]")
    if not (p.steer_min <= u.steer <= p.steer_max):
        raise DynamicsError(f"steer {u.steer} outside [{p.steer_min}, {p.steer_max}]")
    if not dt > 0:
        raise DynamicsError(f"dt must be positive, got {dt}")


def step_unchecked(x, y, vx, vy, a, delta, dt, p: VehicleParams):
    v = math.hypot(vx, vy)
    psi = math.atan2(vy, vx)
    beta = math.atan(p.lr / (p.lf + p.lr) * math.tan(delta))
    x_n = x + v * math.cos(psi + beta) * dt
    y_n = y + v * math.sin(psi + beta) * dt
    if v >= STANDSTILL_SPEED:
        psi = psi + (v / p.lr) * math.sin(beta) * dt
    v_n = min(max(v + a * dt, 0.0), p.v_max)
    return x_n, y_n, v_n * math.cos(psi), v_n * math.sin(psi)


def step(s: VehicleState, u: ControlInput, dt: float, p: VehicleParams) -> VehicleState:
    """Advance one control interval.

    Position uses the pre-update speed; speed is clamped to ``[0, v_max]``.
    """
    _check(s, u, dt, p)
    return VehicleState(*step_unchecked(s.x, s.y, s.vx, s.vy, u.accel, u.steer, dt, p))


def jacobians(s: VehicleState, u: ControlInput, dt: float, p: VehicleParams):
    """Return ``(A, B)``: derivatives of the next state w.r.t. state and control.

    Analytic; the clamp on speed contributes a zero derivative when active.
    """
    _check(s, u, dt, p)
    return linearize(s.vx, s.vy, u.accel, u.steer, dt, p)


def linearize(vx, vy, a, delta, dt, p: VehicleParams):
    """Unchecked core of :func:`jacobians` (the position does not enter)."""
    _, A, B = step_linearize(0.0, 0.0, vx, vy, a, delta, dt, p)
    return A, B


def step_linearize(x, y, vx, vy, a, delta, dt, p: VehicleParams):
    """``step_unchecked`` and ``linearize`` fused: ``(next_state, A, B)``."""
    v = math.hypot(vx, vy)
    psi = math.atan2(vy, vx)
    k = p.lr / (p.lf + p.lr)
    tan_d = math.tan(delta)
    beta = math.atan(k * tan_d)
    dbeta_ddelta = k * (1.0 + tan_d * tan_d) / (1.0 + (k * tan_d) ** 2)
    moving = v >= STANDSTILL_SPEED

    # d v / d(vx, vy) and d psi / d(vx, vy)
    if moving:
        dv0, dv1 = vx / v, vy / v
        dp0, dp1 = -vy / (v * v), vx / (v * v)
    else:
        dv0, dv1 = math.cos(psi), math.sin(psi)
        dp0 = dp1 = 0.0

    c, sn = math.cos(psi + beta), math.sin(psi + beta)

    # heading update
    if moving:
        sb = math.sin(beta)
        psi_n = psi + (v / p.lr) * sb * dt
        dq0 = dp0 + (dt / p.lr) * sb * dv0
        dq1 = dp1 + (dt / p.lr) * sb * dv1
        dpsi_n_ddelta = (v / p.lr) * math.cos(beta) * dbeta_ddelta * dt
    else:
        psi_n, dq0, dq1, dpsi_n_ddelta = psi, dp0, dp1, 0.0

    v_raw = v + a * dt
    v_n = min(max(v_raw, 0.0), p.v_max)
    # the clamp contributes a zero derivative when active
    g = 1.0 if 0.0 < v_raw < p.v_max else 0.0

    cn, sn_n = math.cos(psi_n), math.sin(psi_n)
    # position rows: x += v cos(psi+beta) dt, y += v sin(psi+beta) dt
    # velocity rows: vx' = v' cos psi', vy' = v' sin psi'
    A = np.array([
        [1.0, 0.0, dt * (c * dv0 - v * sn * dp0), dt * (c * dv1 - v * sn * dp1)],
        [0.0, 1.0, dt * (sn * dv0 + v * c * dp0), dt * (sn * dv1 + v * c * dp1)],
        [0.0, 0.0, cn * g * dv0 - v_n * sn_n * dq0, cn * g * dv1 - v_n * sn_n * dq1],
        [0.0, 0.0, sn_n * g * dv0 + v_n * cn * dq0, sn_n * g * dv1 + v_n * cn * dq1],
    ])
    B = np.array([
        [0.0, -dt * v * sn * dbeta_ddelta],
        [0.0, dt * v * c * dbeta_ddelta],
        [cn * g * dt, -v_n * sn_n * dpsi_n_ddelta],
        [sn_n * g * dt, v_n * cn * dpsi_n_ddelta],
    ])
    nxt = (x + v * c * dt, y + v * sn * dt, v_n * cn, v_n * sn_n)
    return nxt, A, B
