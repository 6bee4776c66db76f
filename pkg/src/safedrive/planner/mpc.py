"""Lane-conditioned receding-horizon trajectory optimisation.

The decision vector is the control sequence ``u_0 .. u_{k-1}``; states are
obtained by rolling :func:`safedrive.dynamics.step` forward, and constraint
gradients are chained from :func:`safedrive.dynamics.jacobians`.  Each
subproblem fixes, per surrounding agent, which side of its inflated
prediction interval the ego keeps to; SLSQP then solves the resulting smooth
program by sequential quadratic programming.  Whatever the optimiser returns
is re-simulated and checked against the exact constraint set before it is
called feasible.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from safedrive.dynamics import ControlInput, VehicleParams, VehicleState, step, step_linearize, step_unchecked
from safedrive.prediction import IntervalPrediction
from safedrive.world import LaneId, RoadGeometry, lane_of, lanes_of_interval

BEHIND, AHEAD, BETWEEN = "behind", "ahead", "between"
INIT_STRATEGIES = ("zero", "brake", "accel")


class MpcUsageError(ValueError):
    """The problem itself is malformed (distinct from infeasibility)."""


class PlanStatus(str, enum.Enum):
    Feasible = "Feasible"
    Infeasible = "Infeasible"


@dataclass(frozen=True)
class MpcConfig:
    L_safe: float = 5.0
    eps_feas: float = 1e-3
    k_commit: Optional[int] = None  # None -> ceil(k / 2)
    w_smooth: float = 1.0
    w_lat: float = 0.05
    max_iters: int = 30
    init_strategy: str = "zero"
    # False selects the literal |x - x_lo| >= L and |x - x_hi| >= L reading
    disjunctive: bool = True
    terminal_safe_stop: bool = True
    smooth_eps: float = 1e-3

    def __post_init__(self):
        if not self.L_safe > 0:
            raise ValueError("L_safe must be positive")
        if not self.eps_feas > 0:
            raise ValueError("eps_feas must be positive")
        if self.init_strategy not in INIT_STRATEGIES:
            raise ValueError(f"init_strategy must be one of {INIT_STRATEGIES}")

    def commit_step(self, k: int) -> int:
        kc = math.ceil(k / 2) if self.k_commit is None else self.k_commit
        if not 1 <= kc <= k:
            raise MpcUsageError(f"k_commit={kc} outside [1, {k}]")
        return kc


@dataclass(frozen=True)
class MpcProblem:
    s0: VehicleState
    k: int
    dt: float
    target_lane: LaneId
    predictions: tuple[IntervalPrediction, ...] = ()
    road: RoadGeometry = field(default_factory=RoadGeometry)
    params: VehicleParams = field(default_factory=VehicleParams)
    cfg: MpcConfig = field(default_factory=MpcConfig)
    # lateral setpoint and committed band; default to the target lane
    y_ref: Optional[float] = None
    commit_band: Optional[tuple[float, float]] = None
    # previous plan shifted by one step; tried first when given
    warm_start: Optional[tuple[ControlInput, ...]] = None

    def validate(self) -> None:
        if self.k < 2:
            raise MpcUsageError("horizon k must be at least 2")
        if not self.dt > 0:
            raise MpcUsageError("dt must be positive")
        for pred in self.predictions:
            if pred.k != self.k:
                raise MpcUsageError(f"prediction for agent {pred.agent_id} has {pred.k} steps, expected {self.k}")
        self.cfg.commit_step(self.k)
        if self.warm_start is not None and len(self.warm_start) != self.k:
            raise MpcUsageError(f"warm start has {len(self.warm_start)} controls, expected {self.k}")

    @property
    def reference_y(self) -> float:
        return self.road.center(self.target_lane) if self.y_ref is None else self.y_ref

    @property
    def band(self) -> tuple[float, float]:
        return self.road.band(self.target_lane) if self.commit_band is None else self.commit_band


@dataclass(frozen=True)
class Violation:
    name: str  # road_boundary | lane_commitment | safety | terminal_safety
    step: int
    magnitude: float
    agent_id: Optional[int] = None


@dataclass(frozen=True)
class Diagnostics:
    worst: Optional[Violation]
    iterations: int
    objective: float
    max_violation: float


@dataclass(frozen=True)
class PlanResult:
    status: PlanStatus
    controls: tuple[ControlInput, ...]
    trajectory: tuple[VehicleState, ...]
    diagnostics: Diagnostics

    @property
    def feasible(self) -> bool:
        return self.status is PlanStatus.Feasible

    @property
    def objective(self) -> float:
        return self.diagnostics.objective


# -- exact evaluation ----------------------------------------------------------


def rollout(p: MpcProblem, controls: Sequence[ControlInput]) -> list[VehicleState]:
    s, out = p.s0, []
    for u in controls:
        s = step(s, u, p.dt, p.params)
        out.append(s)
    return out


def objective_value(p: MpcProblem, controls: Sequence[ControlInput], traj: Sequence[VehicleState]) -> float:
    cost = -traj[-1].x
    for u0, u1 in zip(controls, controls[1:]):
        cost += p.cfg.w_smooth * math.hypot(u1.accel - u0.accel, u1.steer - u0.steer)
    return cost + p.cfg.w_lat * (traj[-1].y - p.reference_y) ** 2


def ego_lanes(y: float, p: MpcProblem) -> set[LaneId]:
    return lanes_of_interval(y, y, p.params.width / 2, p.road)


def agent_lanes(pred: IntervalPrediction, i: int, road: RoadGeometry) -> set[LaneId]:
    _, _, y_lo, y_hi = pred.boxes[i - 1]
    return lanes_of_interval(y_lo, y_hi, pred.width / 2, road)


def is_relevant(pred: IntervalPrediction, i: int, y: float, p: MpcProblem) -> bool:
    watched = ego_lanes(y, p) | {p.target_lane}
    return bool(agent_lanes(pred, i, p.road) & watched)


def _stop_margins(p: MpcProblem, pred: IntervalPrediction, s: VehicleState, side: str) -> float:
    """Smallest slack of the terminal safe-stop conditions for one side (>= 0 is safe)."""
    b_e = -p.params.a_min
    v_e = s.speed
    L = p.cfg.L_safe
    x_lo, x_hi, _, _ = pred.boxes[-1]
    b_a = pred.brake
    slacks = []
    if side == BEHIND:
        v_a = pred.speed_lo[-1]
        gap = x_lo - L - s.x
        if b_a > 0:
            slacks.append(gap + v_a**2 / (2 * b_a) - v_e**2 / (2 * b_e))
        if b_e > b_a:
            slacks.append(gap - max(0.0, v_e - v_a) ** 2 / (2 * (b_e - b_a)))
    else:
        if b_a <= 0:
            return math.inf
        v_a = pred.speed_hi[-1]
        gap = s.x - x_hi - L - v_a * p.dt
        slacks.append(gap + v_e**2 / (2 * b_e) - v_a**2 / (2 * b_a))
        if b_a > b_e:
            slacks.append(gap - max(0.0, v_a - v_e) ** 2 / (2 * (b_a - b_e)))
    return min(slacks) if slacks else math.inf


def _separation(p: MpcProblem, x: float, box) -> tuple[float, float]:
    """Violations of the behind and ahead branches at one step."""
    x_lo, x_hi = box[0], box[1]
    L = p.cfg.L_safe
    return max(0.0, x - (x_lo - L)), max(0.0, (x_hi + L) - x)


def violations(p: MpcProblem, traj: Sequence[VehicleState]) -> list[Violation]:
    """Every constraint violated by ``traj`` (states ``s_1..s_k``)."""
    out = []
    kc = p.cfg.commit_step(p.k)
    lo, hi = p.band
    road, L = p.road, p.cfg.L_safe
    for i, s in enumerate(traj, start=1):
        excess = max(road.y_inf - s.y, s.y - road.y_sup)
        if excess > 0:
            out.append(Violation("road_boundary", i, excess))
        if i >= kc:
            # the band is half-open: a point exactly on ``hi`` is outside by 0
            excess = max(lo - s.y, s.y - hi)
            if excess > 0 or (p.commit_band is None and lane_of(s.y, road) != p.target_lane):
                out.append(Violation("lane_commitment", i, max(excess, 0.0)))
        for pred in p.predictions:
            if not is_relevant(pred, i, s.y, p):
                continue
            box = pred.boxes[i - 1]
            if p.cfg.disjunctive:
                behind, ahead = _separation(p, s.x, box)
                mag = min(behind, ahead)
                if i == p.k and p.cfg.terminal_safe_stop:
                    tb = max(behind, -min(0.0, _stop_margins(p, pred, s, BEHIND)))
                    ta = max(ahead, -min(0.0, _stop_margins(p, pred, s, AHEAD)))
                    if min(tb, ta) > mag:
                        out.append(Violation("terminal_safety", i, min(tb, ta), pred.agent_id))
                        continue
            else:
                mag = max(0.0, L - abs(s.x - box[0]), L - abs(s.x - box[1]))
            if mag > 0:
                out.append(Violation("safety", i, mag, pred.agent_id))
    return out


def evaluate(p: MpcProblem, controls: Sequence[ControlInput], iterations: int = 0) -> PlanResult:
    """Re-simulate ``controls`` and classify the result against the exact constraints."""
    traj = rollout(p, controls)
    viol = violations(p, traj)
    worst = max(viol, key=lambda v: v.magnitude) if viol else None
    max_v = worst.magnitude if worst else 0.0
    feasible = max_v <= p.cfg.eps_feas
    diag = Diagnostics(None if feasible else worst, iterations, objective_value(p, controls, traj), max_v)
    return PlanResult(
        PlanStatus.Feasible if feasible else PlanStatus.Infeasible,
        tuple(controls) if feasible else (),
        tuple(traj),
        diag,
    )


# -- smooth subproblem -----------------------------------------------------------


class _Subproblem:
    """Fixed branch assignment and relevance set; exposes f, g and their gradients."""

    def __init__(self, p: MpcProblem, branches: dict[int, str], pairs: set[tuple[int, int]],
                 clear: Optional[dict[tuple[int, int], tuple[float, float]]] = None):
        self.p = p
        self.k = p.k
        self.branches = branches
        self.pairs = sorted(pairs, key=lambda t: (t[1], t[0]))
        # (agent, step) -> (sign, bound): keep sign * (y -+ W/2 - bound) >= 0
        self.clear = sorted((clear or {}).items())
        self.preds = {pred.agent_id: pred for pred in p.predictions}
        # every pair and clearance row is affine in one state entry: const + sign * s[step, col]
        L, half = p.cfg.L_safe, p.params.width / 2
        lin = []
        for agent_id, i in self.pairs:
            box, side = self.preds[agent_id].boxes[i - 1], branches[agent_id]
            if side == BEHIND:
                lin.append((box[0] - L, -1.0, i, 0))
            elif side == AHEAD:
                lin.append((-box[1] - L, 1.0, i, 0))
            else:  # literal reading only: between the inflated ends
                lin += [(-box[0] - L, 1.0, i, 0), (box[1] - L, -1.0, i, 0)]
        for (_, i), (sign, bound) in self.clear:
            lin.append((-half - sign * bound, sign, i, 1))
        cols = np.array(lin, dtype=float).reshape(-1, 4)
        self._lin_c, self._lin_s = cols[:, 0], cols[:, 1]
        self._lin_i, self._lin_j = cols[:, 2].astype(int), cols[:, 3].astype(int)
        self._terminal = [a for a, i in self.pairs if i == self.k] \
            if p.cfg.terminal_safe_stop and p.cfg.disjunctive else []
        self._rolls: dict[bytes, tuple] = {}
        self._plain: dict[bytes, np.ndarray] = {}
        lo, hi = p.params.a_min, p.params.a_max
        self.bounds = [(lo, hi), (p.params.steer_min, p.params.steer_max)] * self.k
        self._lb = np.array([b[0] for b in self.bounds])
        self._ub = np.array([b[1] for b in self.bounds])

    def _key(self, z: np.ndarray):
        # SLSQP may probe a hair outside the bounds
        z = np.clip(z, self._lb, self._ub)
        return z, z.tobytes()

    def _remember(self, cache: dict, key: bytes, value):
        # SLSQP alternates between a few iterates, so keep a handful
        if len(cache) >= 4:
            cache.pop(next(iter(cache)))
        cache[key] = value
        return value

    def _states(self, z: np.ndarray) -> np.ndarray:
        """Rollout without sensitivities; line-search probes only need values."""
        z, key = self._key(z)
        hit = self._rolls.get(key)
        if hit is not None:
            return hit[0]
        hit = self._plain.get(key)
        if hit is not None:
            return hit
        p, k = self.p, self.k
        out = [(p.s0.x, p.s0.y, p.s0.vx, p.s0.vy)]
        for a, d in z.reshape(k, 2).tolist():
            out.append(step_unchecked(*out[-1], a, d, p.dt, p.params))
        return self._remember(self._plain, key, np.array(out))

    def _roll(self, z: np.ndarray):
        z, key = self._key(z)
        hit = self._rolls.get(key)
        if hit is not None:
            return hit
        p, k = self.p, self.k
        states = np.empty((k + 1, 4))
        sens = np.zeros((k + 1, 4, 2 * k))
        x, y, vx, vy = p.s0.x, p.s0.y, p.s0.vx, p.s0.vy
        states[0] = (x, y, vx, vy)
        for i, (a, d) in enumerate(z.reshape(k, 2).tolist()):
            (x, y, vx, vy), A, B = step_linearize(x, y, vx, vy, a, d, p.dt, p.params)
            np.dot(A, sens[i], out=sens[i + 1])
            sens[i + 1, :, 2 * i:2 * i + 2] += B
            states[i + 1] = (x, y, vx, vy)
        return self._remember(self._rolls, key, (states, sens))

    def objective(self, z: np.ndarray) -> float:
        p, k = self.p, self.k
        states = self._states(z)
        eps = p.cfg.smooth_eps
        d = np.diff(z.reshape(k, 2), axis=0)
        r = np.sqrt((d**2).sum(axis=1) + eps**2)
        ey = states[k, 1] - p.reference_y
        return float(-states[k, 0] + p.cfg.w_smooth * float((r - eps).sum()) + p.cfg.w_lat * ey**2)

    def gradient(self, z: np.ndarray) -> np.ndarray:
        p, k = self.p, self.k
        states, sens = self._roll(z)
        eps = p.cfg.smooth_eps
        grad = -sens[k, 0].copy()
        u = z.reshape(k, 2)
        d = np.diff(u, axis=0)
        r = np.sqrt((d**2).sum(axis=1) + eps**2)
        g = p.cfg.w_smooth * d / r[:, None]
        gu = np.zeros_like(u)
        gu[1:] += g
        gu[:-1] -= g
        grad += gu.ravel()
        ey = states[k, 1] - p.reference_y
        grad += 2 * p.cfg.w_lat * ey * sens[k, 1]
        return grad

    def constraint_values(self, z: np.ndarray) -> np.ndarray:
        return self._constraints(self._states(z), None)[0]

    def constraint_jacobian(self, z: np.ndarray) -> np.ndarray:
        return self._constraints(*self._roll(z))[1]

    def _constraints(self, states: np.ndarray, sens: Optional[np.ndarray]):
        p, k = self.p, self.k
        road = p.road
        kc = p.cfg.commit_step(k)
        lo, hi = p.band
        y = states[1:, 1]
        yc = y[kc - 1:]
        vals = [y - road.y_inf, road.y_sup - y, yc - lo, (hi - 1e-4) - yc,
                self._lin_c + self._lin_s * states[self._lin_i, self._lin_j]]
        rows = None
        if sens is not None:
            dy = sens[1:, 1]
            dyc = dy[kc - 1:]
            rows = [dy, -dy, dyc, -dyc, self._lin_s[:, None] * sens[self._lin_i, self._lin_j]]
        for agent_id in self._terminal:
            S = None if sens is None else sens[k]
            v2, r2 = self._terminal_rows(self.preds[agent_id], self.branches[agent_id], states[k], S)
            if v2:
                vals.append(np.array(v2))
                if rows is not None:
                    rows.append(np.array(r2))
        return np.concatenate(vals), None if rows is None else np.vstack(rows)

    def _terminal_rows(self, pred: IntervalPrediction, side: str, s: np.ndarray, S: Optional[np.ndarray]):
        """Terminal stopping-distance rows; ``S`` is None when only values are wanted."""
        p = self.p
        b_e = -p.params.a_min
        L = p.cfg.L_safe
        v_e = math.hypot(s[2], s[3])
        if S is None:
            dv_e = dx = np.zeros(2 * self.k)
        else:
            dv_e = (s[2] * S[2] + s[3] * S[3]) / max(v_e, 1e-9)
            dx = S[0]
        x_lo, x_hi = pred.boxes[-1][0], pred.boxes[-1][1]
        b_a = pred.brake
        vals, rows = [], []
        if side == BEHIND:
            v_a = pred.speed_lo[-1]
            gap = x_lo - L - s[0]
            if b_a > 0:
                vals.append(gap + v_a**2 / (2 * b_a) - v_e**2 / (2 * b_e))
                rows.append(-dx - v_e / b_e * dv_e)
            if b_e > b_a:
                rel = max(0.0, v_e - v_a)
                vals.append(gap - rel**2 / (2 * (b_e - b_a)))
                rows.append(-dx - rel / (b_e - b_a) * dv_e)
        elif side == AHEAD and b_a > 0:
            v_a = pred.speed_hi[-1]
            gap = s[0] - x_hi - L - v_a * p.dt
            vals.append(gap + v_e**2 / (2 * b_e) - v_a**2 / (2 * b_a))
            rows.append(dx + v_e / b_e * dv_e)
            if b_a > b_e:
                rel = max(0.0, v_a - v_e)
                vals.append(gap - rel**2 / (2 * (b_a - b_e)))
                rows.append(dx + rel / (b_a - b_e) * dv_e)
        return vals, rows

    def solve(self, z0: np.ndarray):
        cons = {"type": "ineq", "fun": self.constraint_values, "jac": self.constraint_jacobian}
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = minimize(
                self.objective, z0, jac=self.gradient, method="SLSQP", bounds=self.bounds,
                constraints=[cons], options={"maxiter": self.p.cfg.max_iters, "ftol": 1e-9},
            )
        z = np.clip(res.x, self._lb, self._ub)
        return z, int(res.nit)


def _controls(z: np.ndarray) -> list[ControlInput]:
    return [ControlInput(float(z[2 * i]), float(z[2 * i + 1])) for i in range(len(z) // 2)]


def _initial_guess(p: MpcProblem, strategy: str) -> np.ndarray:
    """Constant acceleration with a proportional heading law toward the reference."""
    accel = {"zero": 0.0, "brake": p.params.a_min, "accel": p.params.a_max}[strategy]
    prm = p.params
    z = np.empty(2 * p.k)
    x, y, vx, vy = p.s0.x, p.s0.y, p.s0.vx, p.s0.vy
    for i in range(p.k):
        v = math.hypot(vx, vy)
        steer = 0.0
        if v > 1.0:
            psi = math.atan2(vy, vx)
            psi_des = float(np.clip(2.5 * (p.reference_y - y) / v, -0.2, 0.2))
            steer = float(np.clip((psi_des - psi) * (prm.lf + prm.lr) / (v * p.dt), prm.steer_min, prm.steer_max))
        z[2 * i], z[2 * i + 1] = accel, steer
        x, y, vx, vy = step_unchecked(x, y, vx, vy, accel, steer, p.dt, prm)
    return z


def _relevant_pairs(p: MpcProblem, traj: Sequence[VehicleState]) -> set[tuple[int, int]]:
    return {
        (pred.agent_id, i)
        for pred in p.predictions
        for i, s in enumerate(traj, start=1)
        if is_relevant(pred, i, s.y, p)
    }


def _clearances(p: MpcProblem, traj, pairs) -> dict[tuple[int, int], tuple[float, float]]:
    """Lateral clearance for agents outside the target lane that ``traj`` stays away from.

    An agent that never enters the target lane only matters while the ego body
    overlaps its lanes, so "stay laterally clear" is the other half of its
    disjunction. Without it, a rollout that briefly drifts into the agent's lane
    would pin a longitudinal constraint the final plan does not need.
    """
    out = {}
    lw = p.road.lane_width
    for pred in p.predictions:
        for i in range(1, p.k + 1):
            if (pred.agent_id, i) in pairs:
                continue
            lanes = agent_lanes(pred, i, p.road)
            if not lanes or p.target_lane in lanes:
                continue
            lo, hi = min(lanes), max(lanes)
            if lane_of(traj[i - 1].y, p.road) > hi:
                out[(pred.agent_id, i)] = (1.0, (int(hi) + 1) * lw + 1e-4)
            else:
                out[(pred.agent_id, i)] = (-1.0, int(lo) * lw - 1e-4)
    return out


def _pick_branch(p: MpcProblem, pred: IntervalPrediction, traj, steps: list[int]) -> str:
    i = min(steps)
    x_lo, x_hi = pred.boxes[i - 1][:2]
    x = traj[i - 1].x
    if p.cfg.disjunctive:
        return BEHIND if x <= 0.5 * (x_lo + x_hi) else AHEAD
    if x <= x_lo:
        return BEHIND
    return AHEAD if x >= x_hi else BETWEEN


def _assign(p: MpcProblem, pairs, traj, branches: Optional[dict] = None) -> dict[int, str]:
    branches = dict(branches or {})
    steps: dict[int, list[int]] = {}
    for agent_id, i in pairs:
        steps.setdefault(agent_id, []).append(i)
    preds = {pred.agent_id: pred for pred in p.predictions}
    for agent_id, idx in steps.items():
        if agent_id not in branches:
            branches[agent_id] = _pick_branch(p, preds[agent_id], traj, idx)
    return branches


def _solve_assignment(p: MpcProblem, z0: np.ndarray, branches: dict[int, str], pairs: set) -> tuple[PlanResult, np.ndarray, dict, int]:
    """Solve with fixed branches, growing the relevance set until it is stable."""
    iters = 0
    z = z0
    traj = rollout(p, _controls(z0))
    clear = _clearances(p, traj, pairs)
    for _ in range(3):
        sub = _Subproblem(p, branches, pairs, clear)
        z, nit = sub.solve(z)
        iters += nit
        traj = rollout(p, _controls(z))
        grown = _relevant_pairs(p, traj) - pairs
        if not grown:
            break
        pairs = pairs | grown
        clear = {key: c for key, c in clear.items() if key not in grown}
        branches = _assign(p, pairs, traj, branches)
    return evaluate(p, _controls(z), iters), z, branches, iters


def solve_lane_conditioned(p: MpcProblem) -> PlanResult:
    """Best plan that keeps to ``p.target_lane`` from the commitment step on."""
    p.validate()
    strategies = [p.cfg.init_strategy] + [s for s in INIT_STRATEGIES if s != p.cfg.init_strategy]
    tried: list[tuple] = []
    results: list[PlanResult] = []
    total_iters = 0
    if p.warm_start is not None:
        lo = [p.params.a_min, p.params.steer_min]
        hi = [p.params.a_max, p.params.steer_max]
        z0 = np.clip([[u.accel, u.steer] for u in p.warm_start], lo, hi).ravel()
        traj0 = rollout(p, _controls(z0))
        pairs = _relevant_pairs(p, traj0) | _target_pairs(p)
        branches = _assign(p, pairs, traj0)
        res, _, branches, it = _solve_assignment(p, z0, branches, pairs)
        if res.feasible:
            # the cold solve that produced the warm start already compared branches
            return replace(res, diagnostics=replace(res.diagnostics, iterations=it))
        total_iters += it
    for strategy in strategies:
        z0 = _initial_guess(p, strategy)
        traj0 = rollout(p, _controls(z0))
        pairs = _relevant_pairs(p, traj0) | _target_pairs(p)
        branches = _assign(p, pairs, traj0)
        key = tuple(sorted(branches.items()))
        # an assignment that already produced a feasible plan is not re-solved;
        # an infeasible one gets another go from the new starting point
        if any(t == key and r.feasible for t, r in zip(tried, results)):
            continue
        tried.append(key)
        res, z, branches, it = _solve_assignment(p, z0, branches, pairs)
        total_iters += it
        results.append(res)
        if strategy == strategies[0] and res.feasible and not _branch_sensitive(branches):
            break

    feasible = [r for r in results if r.feasible]
    if not feasible:
        # flip the side of the worst offender, one agent at a time
        best = min(results, key=lambda r: r.diagnostics.max_violation)
        branches = dict(tried[results.index(best)])
        for _ in range(len(p.predictions)):
            worst = best.diagnostics.worst
            if worst is None or worst.agent_id is None or worst.agent_id not in branches:
                break
            branches[worst.agent_id] = AHEAD if branches[worst.agent_id] == BEHIND else BEHIND
            key = tuple(sorted(branches.items()))
            if key in tried:
                break
            tried.append(key)
            z0 = _initial_guess(p, BRANCH_INIT[branches[worst.agent_id]])
            pairs = _relevant_pairs(p, rollout(p, _controls(z0))) | _target_pairs(p)
            res, z, branches, it = _solve_assignment(p, z0, branches, pairs)
            total_iters += it
            results.append(res)
            if res.feasible:
                feasible.append(res)
                break
            if res.diagnostics.max_violation < best.diagnostics.max_violation:
                best = res
    pool = feasible or results
    key = (lambda r: r.objective) if feasible else (lambda r: r.diagnostics.max_violation)
    chosen = min(pool, key=key)
    return replace(chosen, diagnostics=replace(chosen.diagnostics, iterations=total_iters))


BRANCH_INIT = {BEHIND: "brake", AHEAD: "accel", BETWEEN: "zero"}


def _target_pairs(p: MpcProblem) -> set[tuple[int, int]]:
    return {
        (pred.agent_id, i)
        for pred in p.predictions
        for i in range(1, p.k + 1)
        if p.target_lane in agent_lanes(pred, i, p.road)
    }


def _branch_sensitive(branches: dict[int, str]) -> bool:
    # staying behind an agent is never cheaper than passing it, so only then
    # are the other initialisations worth a try
    return any(side != AHEAD for side in branches.values())


def solve_naive_minlp(p: MpcProblem) -> tuple[PlanResult, dict[LaneId, PlanResult]]:
    """Enumerate the integer lane choice; the best feasible lane wins.

    Ties on the objective go to the ego's current lane, then to the lower
    lane index.
    """
    current = lane_of(p.s0.y, p.road)
    per_lane = {
        lane: solve_lane_conditioned(replace(p, target_lane=lane, y_ref=None, commit_band=None))
        for lane in LaneId
    }
    feasible = [lane for lane in LaneId if per_lane[lane].feasible]
    if not feasible:
        return per_lane[current], per_lane
    best = min(feasible, key=lambda lane: (per_lane[lane].objective, lane != current, int(lane)))
    return per_lane[best], per_lane
