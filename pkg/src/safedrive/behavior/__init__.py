from safedrive.behavior.engine import (
    ActionSource,
    BehaviorConfig,
    DecisionCycleLog,
    LaneChangeState,
    case2_step_state,
    decide_case1,
    decide_case2,
    execute_failsafe,
    execute_plan,
    run_case1_cycle,
    run_case2_cycle,
)
from safedrive.behavior.graph import (
    DEFAULT_EDGES,
    Check,
    InvalidTransition,
    StateMachineGraph,
    TransitionVerdict,
    reflect,
    reflection_feedback,
)
from safedrive.decision.protocol import BehaviorState
