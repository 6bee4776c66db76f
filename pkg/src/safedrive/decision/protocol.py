"""Messages and decisions exchanged with the decision-maker."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Union

from safedrive.world import LaneId


class BehaviorState(str, enum.Enum):
    Stay = "Stay"
    Attempt = "Attempt"
    Finish = "Finish"
    Abort = "Abort"


class DecisionCase(str, enum.Enum):
    Case1 = "Case1"  # lane selection
    Case2 = "Case2"  # state-machine lane change


class Role(str, enum.Enum):
    System = "system"
    User = "user"
    Assistant = "assistant"


@dataclass(frozen=True)
class Decision:
    choice: Union[LaneId, BehaviorState]
    rationale: str = ""

    @property
    def is_lane(self) -> bool:
        return isinstance(self.choice, LaneId)

    @property
    def token(self) -> str:
        return self.choice.label if self.is_lane else self.choice.value


@dataclass(frozen=True)
class Message:
    role: Role
    text: str
    # structured copy of verifier/reflection feedback, for test doubles
    meta: Optional[dict] = field(default=None, compare=False)


class Conversation:
    """Ordered chat history; starts with exactly one system message."""

    def __init__(self, system_prompt: str):
        self.messages: list[Message] = [Message(Role.System, system_prompt)]

    def add(self, role: Role, text: str, meta: Optional[dict] = None) -> None:
        if role is Role.System:
            raise ValueError("a conversation has exactly one system message")
        self.messages.append(Message(role, text, meta))

    def user(self, text: str, meta: Optional[dict] = None) -> None:
        self.add(Role.User, text, meta)

    def assistant(self, text: str) -> None:
        self.add(Role.Assistant, text)

    @property
    def last(self) -> Message:
        return self.messages[-1]

    def as_payload(self) -> list[dict]:
        return [{"role": m.role.value, "content": m.text} for m in self.messages]

    def __len__(self) -> int:
        return len(self.messages)
