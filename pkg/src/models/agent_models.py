from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional

from config import Config
from models.envelope import require_agent_id


class Role(Enum):
    ORCHESTRATOR = "orchestrator"
    MOBILE = "mobile"
    BRIDGE = "bridge"


class DeviceKind(Enum):
    LOCK = "lock"
    LIGHT = "light"
    SWITCH = "switch"
    SENSOR = "sensor"
    VALVE = "valve"
    RELAY = "relay"


class ActionType(Enum):
    LOCK = "lock"
    UNLOCK = "unlock"
    TURN_ON = "turn_on"
    TURN_OFF = "turn_off"
    SET_LEVEL = "set_level"


# Device state reached when an action completes
ACTION_RESULT_STATE = {
    ActionType.LOCK: "locked",
    ActionType.UNLOCK: "unlocked",
    ActionType.TURN_ON: "on",
    ActionType.TURN_OFF: "off",
    ActionType.SET_LEVEL: "level",
}


class EndpointKind(Enum):
    LOCAL = "local"
    CLOUD = "cloud"


@dataclass(frozen=True)
class EndpointSpec:
    kind: EndpointKind
    name: str
    host: Optional[str] = None
    context_capacity_bytes: int = Config.DEFAULT_CONTEXT_CAPACITY_BYTES

    def __post_init__(self):
        if self.context_capacity_bytes <= 0:
            raise ValueError("context_capacity_bytes must be > 0")
        if self.kind is EndpointKind.CLOUD and not self.host:
            raise ValueError("cloud endpoints need a host")


@dataclass(frozen=True)
class AgentSpec:
    id: str
    role: Role
    link: Optional[str] = None
    inference: List[EndpointSpec] = field(default_factory=list)
    heartbeat_interval_us: int = Config.DEFAULT_HEARTBEAT_INTERVAL_US
    key_id: Optional[str] = None
    defer_when_unstable: bool = False
    stability_window_us: int = 0

    def __post_init__(self):
        require_agent_id(self.id)


@dataclass
class Device:
    id: str
    kind: DeviceKind
    actuation_duration_us: int
    state: str = "idle"
    busy_until_us: int = 0
    history: List[str] = field(default_factory=list)

    def __post_init__(self):
        if self.actuation_duration_us <= 0:
            raise ValueError(f"device {self.id!r}: actuation duration must be > 0")

    def complete(self, new_state: str) -> None:
        """State transitions only happen here, when an actuation completes"""
        self.state = new_state
        self.history.append(new_state)


@dataclass(frozen=True)
class AuditRecord:
    actor: str
    issued_by: Optional[str]
    correlation_id: Optional[str]
    device_id: str
    action: str
    executed_at_us: int
    completes_at_us: int

    def to_payload(self) -> Dict[str, Any]:
        return {
            "kind": "actuation",
            "actor": self.actor,
            "issued_by": self.issued_by,
            "command_correlation_id": self.correlation_id,
            "device": self.device_id,
            "action": self.action,
            "executed_at_us": self.executed_at_us,
            "completes_at_us": self.completes_at_us,
        }


@dataclass(frozen=True)
class Reaction:
    """What an agent did in response to one inbox message"""
    kind: str
    details: Dict[str, Any] = field(default_factory=dict)


@dataclass
class ActuationLogEntry:
    correlation_id: Optional[str]
    device_id: str
    device_kind: DeviceKind
    actuation_duration_us: int
    started_us: int
    completes_us: int
    via_topic: str
    issued_by: Optional[str]
    deferred_us: int = 0
