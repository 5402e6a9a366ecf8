import re
from dataclasses import dataclass
from enum import Enum
from typing import Optional

_FORBIDDEN_ID_CHARS = ("/", "+", "#")
CORRELATION_ID_PATTERN = re.compile(r"^[0-9a-f]{32}$")


class EnvelopeError(ValueError):
    """Base class for envelope codec and signing failures"""


class MalformedEnvelope(EnvelopeError):
    pass


class MissingField(EnvelopeError):
    def __init__(self, field_name: str):
        super().__init__(f"missing_field({field_name})")
        self.field_name = field_name


class PayloadTooLarge(EnvelopeError):
    def __init__(self, size: int, limit: int):
        super().__init__(f"payload of {size} bytes exceeds limit of {limit} bytes")
        self.size = size
        self.limit = limit


class UnsignableEnvelope(EnvelopeError):
    pass


class MsgType(Enum):
    COMMAND = "command"
    ECHO_PROBE = "echo_probe"
    ECHO_REPLY = "echo_reply"
    HEARTBEAT = "heartbeat"
    AUDIT = "audit"
    STATUS = "status"
    STATE_REF = "state_ref"


class RejectReason(Enum):
    MISSING_AUTH = "missing_auth"
    UNKNOWN_KEY = "unknown_key"
    BAD_SIGNATURE = "bad_signature"
    REPLAYED_NONCE = "replayed_nonce"
    STALE_COUNTER = "stale_counter"


def is_valid_agent_id(agent_id: object) -> bool:
    """Agent ids are non-empty and carry no topic separators or wildcards"""
    if not isinstance(agent_id, str) or not agent_id:
        return False
    return not any(ch in agent_id for ch in _FORBIDDEN_ID_CHARS)


def is_valid_correlation_id(value: object) -> bool:
    return isinstance(value, str) and CORRELATION_ID_PATTERN.match(value) is not None


def require_agent_id(agent_id: str) -> str:
    if not is_valid_agent_id(agent_id):
        raise ValueError(f"invalid agent id: {agent_id!r}")
    return agent_id


@dataclass(frozen=True)
class Envelope:
    """Coordination message carried on the bus.

    sender and correlation_id may be absent: the lenient decoder has to
    represent what an unauthenticated broker lets through.
    """
    msg_type: MsgType
    timestamp_us: int
    payload: bytes
    sender: Optional[str] = None
    correlation_id: Optional[str] = None

    def __post_init__(self):
        if self.timestamp_us < 0:
            raise MalformedEnvelope("timestamp_us must be >= 0")
        if self.sender is not None and not is_valid_agent_id(self.sender):
            raise MalformedEnvelope(f"invalid sender id: {self.sender!r}")
        if self.correlation_id is not None and not is_valid_correlation_id(self.correlation_id):
            raise MalformedEnvelope("correlation_id must be 32 lowercase hex chars")


@dataclass(frozen=True)
class AuthBlock:
    key_id: str
    nonce: str  # 32 hex chars
    counter: int
    signature: str  # 64 hex chars (HMAC-SHA256)


@dataclass(frozen=True)
class VerificationResult:
    verified: bool
    reason: Optional[RejectReason] = None

    def __post_init__(self):
        if self.verified and self.reason is not None:
            raise ValueError("verified results carry no reason")
        if not self.verified and self.reason is None:
            raise ValueError("rejected results carry exactly one reason")

    @classmethod
    def ok(cls) -> "VerificationResult":
        return cls(verified=True)

    @classmethod
    def rejected(cls, reason: RejectReason) -> "VerificationResult":
        return cls(verified=False, reason=reason)

    def __str__(self) -> str:
        return "verified" if self.verified else f"rejected({self.reason.value})"
