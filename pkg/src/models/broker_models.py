from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional

from config import Config
from models.envelope import EnvelopeError
from tools.envelope_codec import DecodeMode, decode_envelope
from tools.signing import Keystore, ReplayState
from tools.topics import AclRule


class Posture(Enum):
    BASELINE = "baseline"
    HARDENED = "hardened"


class BrokerVerdict(Enum):
    ACCEPTED = "accepted"
    REJECTED = "rejected"


class SessionState(Enum):
    CONNECTED = "connected"
    PARKED = "parked"
    RECONNECTING = "reconnecting"


@dataclass
class BrokerPolicy:
    """Posture switch: baseline ignores acl and keystore entirely"""
    mode: Posture = Posture.BASELINE
    acl: List[AclRule] = field(default_factory=list)
    keystore: Keystore = field(default_factory=Keystore)
    replay_state: ReplayState = field(default_factory=ReplayState)
    mirror_topic: str = Config.MIRROR_TOPIC

    def __post_init__(self):
        if self.mode is Posture.HARDENED and len(self.keystore) == 0:
            raise ValueError("hardened broker policy requires a non-empty keystore")

    @property
    def hardened(self) -> bool:
        return self.mode is Posture.HARDENED


@dataclass
class ClientSession:
    session_id: str
    principal: str
    link: Optional[str] = None
    state: SessionState = SessionState.CONNECTED
    subscriptions: Dict[str, int] = field(default_factory=dict)  # filter -> subscription id

    @property
    def connected(self) -> bool:
        return self.state is SessionState.CONNECTED


@dataclass(frozen=True)
class Delivery:
    session_id: str
    subscription_id: int
    topic: str
    data: bytes
    mirrored: bool = False


@dataclass
class DeliveryRecord:
    topic: str
    session_id: str
    verdict: BrokerVerdict
    broker_ts_us: int
    reason: Optional[str] = None
    deliveries: List[Delivery] = field(default_factory=list)
    missed: List[str] = field(default_factory=list)  # parked subscriber session ids

    @property
    def accepted(self) -> bool:
        return self.verdict is BrokerVerdict.ACCEPTED

    def to_log(self) -> dict:
        return {
            "topic": self.topic,
            "session": self.session_id,
            "verdict": self.verdict.value,
            "reason": self.reason,
            "broker_ts_us": self.broker_ts_us,
            "delivered_to": [d.session_id for d in self.deliveries if not d.mirrored],
            "mirrored_to": [d.session_id for d in self.deliveries if d.mirrored],
            "missed": list(self.missed),
        }


@dataclass(frozen=True)
class MirrorEntry:
    """One message as seen by the supervision mirror"""
    receipt_us: int
    topic: str
    broker_ts_us: int
    data: bytes

    def decoded(self):
        """(Envelope, AuthBlock) decoded leniently, or None when malformed"""
        try:
            return decode_envelope(self.data, DecodeMode.LENIENT)
        except EnvelopeError:
            return None
