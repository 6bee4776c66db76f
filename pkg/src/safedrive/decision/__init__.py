from safedrive.decision.backends import (
    Backend,
    BackendConfig,
    BackendKind,
    TransportError,
    make_backend,
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
from safedrive.decision.prompts import PROMPT_VERSION, PromptConfig, build_system_prompt
from safedrive.decision.protocol import BehaviorState, Conversation, Decision, DecisionCase, Message, Role
from safedrive.decision.scene import LaneChangeContext, SceneDescription, SceneFact, describe_scene
