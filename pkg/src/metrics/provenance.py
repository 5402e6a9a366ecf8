"""Provenance coverage and actuation-to-audit timing, computed from the supervision mirror."""
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional

from models.agent_models import Device, DeviceKind
from models.broker_models import MirrorEntry
from models.envelope import Envelope, MsgType
from metrics.stats import SummaryStats, summarize
from tools.envelope_codec import payload_json

logger = logging.getLogger(__name__)

PROVENANCE_FIELDS = ("sender", "timestamp", "correlation_id", "msg_type", "action")


@dataclass
class ProvenanceAudit:
    n: int
    present: Dict[str, int]
    expected_commands: Optional[int] = None

    @property
    def vacuous(self) -> bool:
        return self.n == 0

    @property
    def coverage(self) -> Dict[str, float]:
        """Fraction of audited commands carrying each field; an empty audit is full coverage"""
        if self.n == 0:
            return {name: 1.0 for name in PROVENANCE_FIELDS}
        return {name: self.present[name] / self.n for name in PROVENANCE_FIELDS}

    @property
    def complete(self) -> bool:
        return all(value == 1.0 for value in self.coverage.values())

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "vacuous": self.vacuous,
            "expected_commands": self.expected_commands,
            "coverage": {name: round(value, 4) for name, value in self.coverage.items()},
        }


def _is_actuation_command(env: Envelope) -> bool:
    if env.msg_type is not MsgType.COMMAND:
        return False
    return payload_json(env).get("kind") != "infer"


def _has_action(env: Envelope) -> bool:
    body = payload_json(env)
    return isinstance(body.get("action"), str) and bool(body["action"])


def provenance_audit(mirror_log: Iterable[MirrorEntry], n_commands: Optional[int] = None) -> ProvenanceAudit:
    """Audit every actuation command the mirror saw for its provenance fields"""
    present = {name: 0 for name in PROVENANCE_FIELDS}
    n = 0
    for entry in mirror_log:
        decoded = entry.decoded()
        if decoded is None:
            continue
        env, _ = decoded
        if not _is_actuation_command(env):
            continue
        n += 1
        present["sender"] += bool(env.sender)
        present["timestamp"] += env.timestamp_us is not None
        present["correlation_id"] += bool(env.correlation_id)
        present["msg_type"] += env.msg_type is not None
        present["action"] += _has_action(env)
    if n_commands is not None and n < n_commands:
        logger.warning("provenance audit saw %d commands, %d were issued", n, n_commands)
    return ProvenanceAudit(n=n, present=present, expected_commands=n_commands)


def interceptable(p99_gap_us: int, actuation_duration_us: int) -> bool:
    """A monitor can stop an action only if its audit arrives before the device finishes"""
    return p99_gap_us < actuation_duration_us


@dataclass
class AuditGapReport:
    stats: Optional[SummaryStats]
    unmatched: int
    durations: Dict[str, int] = field(default_factory=dict)

    @property
    def verdicts(self) -> Dict[str, bool]:
        if self.stats is None:
            return {}
        return {kind: interceptable(self.stats.p99, duration) for kind, duration in self.durations.items()}

    def to_dict(self) -> dict:
        return {
            "stats": self.stats.to_dict() if self.stats else None,
            "unmatched": self.unmatched,
            "devices": {
                kind: {"actuation_duration_us": duration, "interceptable": self.verdicts.get(kind)}
                for kind, duration in sorted(self.durations.items())
            },
        }


def device_durations(devices: Iterable[Device]) -> Dict[str, int]:
    """Shortest actuation duration per device kind; sensors do not actuate"""
    durations: Dict[str, int] = {}
    for device in devices:
        if device.kind is DeviceKind.SENSOR:
            continue
        current = durations.get(device.kind.value)
        durations[device.kind.value] = device.actuation_duration_us if current is None \
            else min(current, device.actuation_duration_us)
    return durations


def actuation_audit_gap(command_publishes: Mapping[str, int], audit_receipts: Mapping[str, int],
                        durations: Mapping[str, int]) -> AuditGapReport:
    """Gap from command publish to its audit record reaching the mirror.

    command_publishes and audit_receipts are keyed by command correlation id.
    Commands whose audit never reached the mirror are counted as unmatched.
    """
    gaps: List[int] = []
    unmatched = 0
    for cid, published in sorted(command_publishes.items()):
        receipt = audit_receipts.get(cid)
        if receipt is None:
            unmatched += 1
            continue
        gaps.append(receipt - published)
    if unmatched:
        logger.info("%d commands have no audit receipt on the mirror", unmatched)
    return AuditGapReport(stats=summarize(gaps) if gaps else None, unmatched=unmatched,
                          durations=dict(durations))


def world_audit_gap(world) -> AuditGapReport:
    publishes = {cid: entry.publish_us for cid, entry in world.command_log.items()}
    return actuation_audit_gap(publishes, world.audit_receipts(), device_durations(world.devices.values()))
