from safedrive.planner.failsafe import FailsafeConfig, failsafe_control, find_leader
from safedrive.planner.mpc import (
    Diagnostics,
    MpcConfig,
    MpcProblem,
    MpcUsageError,
    PlanResult,
    PlanStatus,
    Violation,
    evaluate,
    rollout,
    solve_lane_conditioned,
    solve_naive_minlp,
    violations,
)
from safedrive.planner.oracle import OracleBoundError, grid_oracle

__all__ = [
    "Diagnostics",
    "FailsafeConfig",
    "MpcConfig",
    "MpcProblem",
    "MpcUsageError",
    "OracleBoundError",
    "PlanResult",
    "PlanStatus",
    "Violation",
    "evaluate",
    "failsafe_control",
    "find_leader",
    "grid_oracle",
    "rollout",
    "solve_lane_conditioned",
    "solve_naive_minlp",
    "violations",
]
