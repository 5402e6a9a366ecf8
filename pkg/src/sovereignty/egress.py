"""Sovereignty boundary: egress ledger, name-resolution events and fallback policy."""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, FrozenSet, List, Optional, Set

from config import Config
from models.envelope import MsgType
from tools.envelope_codec import canonical_json, payload_json

logger = logging.getLogger(__name__)


class FallbackMode(Enum):
    FORBID = "forbid"
    ALLOW_SILENT = "allow_silent"
    ALLOW_WITH_MARKER = "allow_with_marker"


class EgressDecision(Enum):
    ALLOW = "allow"
    ALLOW_MARKED = "allow_marked"
    DENY = "deny"


class EgressCause(Enum):
    INFERENCE_FALLBACK = "inference_fallback"
    CLOUD_API = "cloud_api"


class VisibilityLayer(Enum):
    COORDINATION = "coordination"
    AUDIT_MARKER = "audit_marker"
    DNS = "dns"


@dataclass(frozen=True)
class BoundaryPolicy:
    cloud_fallback: FallbackMode = FallbackMode.ALLOW_SILENT
    sensitive_labels: FrozenSet[str] = frozenset()


@dataclass(frozen=True)
class EgressEntry:
    timestamp_us: int
    source_agent: str
    destination_host: str
    destination_address: str
    bytes_sent: int
    cause: EgressCause
    call_id: str

    def to_log(self) -> dict:
        return {
            "timestamp_us": self.timestamp_us,
            "source": self.source_agent,
            "host": self.destination_host,
            "address": self.destination_address,
            "bytes": self.bytes_sent,
            "cause": self.cause.value,
            "call_id": self.call_id,
        }


class EgressLedger:
    """Append-only record of bytes leaving the local network"""

    def __init__(self):
        self._entries: List[EgressEntry] = []

    def append(self, entry: EgressEntry) -> None:
        if entry.bytes_sent <= 0:
            raise ValueError("egress entries must carry a positive byte count")
        self._entries.append(entry)
        logger.info("egress: %s -> %s (%d B, %s)", entry.source_agent,
                    entry.destination_host, entry.bytes_sent, entry.cause.value)

    @property
    def entries(self) -> List[EgressEntry]:
        return list(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def export(self, path: str) -> None:
        with open(path, "wb") as fh:
            for entry in self._entries:
                fh.write(canonical_json(entry.to_log()) + b"\n")


@dataclass(frozen=True)
class DnsEvent:
    timestamp_us: int
    agent: str
    hostname: str
    address: str
    call_id: str

    def to_log(self) -> dict:
        return {"timestamp_us": self.timestamp_us, "agent": self.agent,
                "hostname": self.hostname, "address": self.address, "call_id": self.call_id}


@dataclass
class Resolver:
    """Scenario-declared host table; every lookup is retried retry_count times"""
    hosts: Dict[str, str] = field(default_factory=dict)
    retry_count: int = Config.DNS_RETRY_COUNT
    log: List[DnsEvent] = field(default_factory=list)

    def resolve(self, agent: str, hostname: str, now_us: int, call_id: str) -> str:
        if hostname not in self.hosts:
            raise KeyError(f"host {hostname!r} is not declared in the scenario")
        address = self.hosts[hostname]
        for _ in range(max(1, self.retry_count)):
            self.log.append(DnsEvent(now_us, agent, hostname, address, call_id))
        return address

    def export(self, path: str) -> None:
        with open(path, "wb") as fh:
            for event in self.log:
                fh.write(canonical_json(event.to_log()) + b"\n")


def authorize_egress(policy: BoundaryPolicy, agent: str, dest: str, label: Optional[str],
                     size: int) -> EgressDecision:
    """Decide whether a cloud fallback may leave the local network"""
    if policy.cloud_fallback is FallbackMode.FORBID or (label is not None and label in policy.sensitive_labels):
        logger.warning("egress denied for %s -> %s (%d B, label=%s)", agent, dest, size, label)
        return EgressDecision.DENY
    if policy.cloud_fallback is FallbackMode.ALLOW_WITH_MARKER:
        return EgressDecision.ALLOW_MARKED
    return EgressDecision.ALLOW


@dataclass
class EgressReport:
    per_destination: Dict[str, int]
    external_addresses: List[str]
    total_bytes: int
    entries: int
    operations: int
    dns_events: int

    @property
    def external_ip_count(self) -> int:
        return len(self.external_addresses)

    def to_dict(self) -> dict:
        return {
            "per_destination": dict(sorted(self.per_destination.items())),
            "external_ips": self.external_ip_count,
            "external_addresses": self.external_addresses,
            "total_bytes": self.total_bytes,
            "entries": self.entries,
            "operations": self.operations,
            "dns_events": self.dns_events,
        }


def egress_report(world) -> EgressReport:
    totals: Dict[str, int] = {}
    addresses: Set[str] = set()
    for entry in world.ledger.entries:
        totals[entry.destination_host] = totals.get(entry.destination_host, 0) + entry.bytes_sent
        addresses.add(entry.destination_address)
    return EgressReport(
        per_destination=totals,
        external_addresses=sorted(addresses),
        total_bytes=sum(totals.values()),
        entries=len(world.ledger),
        operations=world.operation_count,
        dns_events=len(world.resolver.log),
    )


@dataclass(frozen=True)
class Crossing:
    call_id: str
    agent: str
    host: str
    bytes_sent: int
    cause: EgressCause
    layers: FrozenSet[VisibilityLayer]

    @property
    def dns_only(self) -> bool:
        return self.layers == frozenset({VisibilityLayer.DNS})


def detect_crossings(world) -> List[Crossing]:
    """Classify each cloud egress by which observation layers saw it"""
    dns_calls = {event.call_id for event in world.resolver.log}
    marker_calls: Set[str] = set()
    coordination_calls: Set[str] = set()
    for mirror_entry in world.mirror_log:
        decoded = mirror_entry.decoded()
        if decoded is None:
            continue
        env, _ = decoded
        body = payload_json(env)
        call_id = body.get("call_id")
        if not call_id:
            continue
        if env.msg_type is MsgType.AUDIT and body.get("kind") == "boundary_crossing":
            marker_calls.add(call_id)
        else:
            coordination_calls.add(call_id)

    crossings = []
    for entry in world.ledger.entries:
        layers = set()
        if entry.call_id in dns_calls:
            layers.add(VisibilityLayer.DNS)
        if entry.call_id in marker_calls:
            layers.add(VisibilityLayer.AUDIT_MARKER)
        if entry.call_id in coordination_calls:
            layers.add(VisibilityLayer.COORDINATION)
        crossings.append(Crossing(call_id=entry.call_id, agent=entry.source_agent,
                                  host=entry.destination_host, bytes_sent=entry.bytes_sent,
                                  cause=entry.cause, layers=frozenset(layers)))
    return crossings


def coordination_anomalies(crossings: List[Crossing]) -> int:
    """Crossings that left any trace on the coordination layer (mirror, non-audit)"""
    return sum(1 for c in crossings if VisibilityLayer.COORDINATION in c.layers)
