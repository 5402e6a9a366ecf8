"""Scripted attacks against a simulated swarm, one per attack surface."""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Mapping, Optional, Union

from config import Config
from models.agent_models import ActionType, DeviceKind, Role
from models.envelope import Envelope, MsgType
from models.netsim_models import PartitionEvent
from sim.world import World
from sovereignty.egress import VisibilityLayer, coordination_anomalies, detect_crossings
from tools.envelope_codec import DecodeMode, canonical_json, decode_envelope, encode_envelope, payload_json
from tools.topics import actuate_topic, inbox_topic
from trust.tiered_trust import lockout_report

logger = logging.getLogger(__name__)


class UnknownAttack(ValueError):
    pass


class AttackKind(Enum):
    MISSING_SENDER = "MissingSender"
    SPOOFED_SENDER = "SpoofedSender"
    REPLAY = "Replay"
    DIRECT_SAFETY_PUBLISH = "DirectSafetyPublish"
    EMBEDDED_STATE_DRIFT = "EmbeddedStateDrift"
    FORGED_FLOOD = "ForgedFlood"
    INDUCED_FALLBACK = "InducedFallback"
    PARTITION_BLACKOUT = "PartitionBlackout"


BUS_ATTACKS = (AttackKind.MISSING_SENDER, AttackKind.SPOOFED_SENDER, AttackKind.REPLAY,
              AttackKind.DIRECT_SAFETY_PUBLISH)

ATTACK_LABELS = {
    AttackKind.MISSING_SENDER: "Missing sender field",
    AttackKind.SPOOFED_SENDER: "Spoofed sender",
    AttackKind.REPLAY: "Replayed message",
    AttackKind.DIRECT_SAFETY_PUBLISH: "Direct safety publish",
    AttackKind.EMBEDDED_STATE_DRIFT: "Embedded state drift",
    AttackKind.FORGED_FLOOD: "Forged message flood",
    AttackKind.INDUCED_FALLBACK: "Induced cloud fallback",
    AttackKind.PARTITION_BLACKOUT: "Partition blackout",
}

ATTACK_SURFACES = {
    AttackKind.MISSING_SENDER: "bus trust",
    AttackKind.SPOOFED_SENDER: "bus trust",
    AttackKind.REPLAY: "bus trust",
    AttackKind.DIRECT_SAFETY_PUBLISH: "bus trust",
    AttackKind.EMBEDDED_STATE_DRIFT: "shared state",
    AttackKind.FORGED_FLOOD: "trust erosion",
    AttackKind.INDUCED_FALLBACK: "sovereignty",
    AttackKind.PARTITION_BLACKOUT: "failover",
}

DEFAULT_ATTACK_AT_US = 1_200_000
DEFAULT_SETTLE_US = 2_000_000


@dataclass
class AttackOutcome:
    kind: AttackKind
    posture: str
    verdicts: List[str] = field(default_factory=list)
    executions: int = 0
    audit_records: int = 0
    detection_events: int = 0
    evidence: Dict[str, Any] = field(default_factory=dict)

    @property
    def label(self) -> str:
        return ATTACK_LABELS[self.kind]

    @property
    def accepted(self) -> bool:
        return bool(self.verdicts) and all(v == "accepted" for v in self.verdicts)

    @property
    def rejection_reasons(self) -> List[str]:
        return [v.split(":", 1)[1] for v in self.verdicts if v.startswith("rejected:")]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "label": self.label,
            "surface": ATTACK_SURFACES[self.kind],
            "posture": self.posture,
            "verdicts": list(self.verdicts),
            "accepted": self.accepted,
            "executions": self.executions,
            "audit_records": self.audit_records,
            "detection_events": self.detection_events,
            "evidence": dict(sorted(self.evidence.items())),
        }


def parse_attack_kind(kind: Union[AttackKind, str]) -> AttackKind:
    if isinstance(kind, AttackKind):
        return kind
    try:
        return AttackKind(kind)
    except ValueError:
        raise UnknownAttack(f"unknown attack kind {kind!r}") from None


# --- Helpers ---

def _advance_to(world, t_us: int) -> None:
    world.start()
    if world.now_us < t_us:
        world.sim.run(until_us=t_us)


def _rogue_publish(world, topic: str, data: bytes) -> None:
    world.transmit(world.config.rogue_principal, topic, data)


def _target_device(world, params: Mapping[str, Any]) -> str:
    if params.get("device"):
        return params["device"]
    for kind in (DeviceKind.LOCK, DeviceKind.VALVE, DeviceKind.SWITCH, DeviceKind.LIGHT):
        for device in world.devices.values():
            if device.kind is kind:
                return device.id
    raise ValueError("scenario has no actuatable device")


def _learned_instance_tag(world, sender: str) -> Optional[str]:
    """Latest instance tag the rogue has seen in sender's heartbeats"""
    tag = None
    for topic, data in world.rogue_view():
        if topic != Config.BROADCAST_TOPIC:
            continue
        env, _ = decode_envelope(data, DecodeMode.LENIENT)
        if env.msg_type is MsgType.HEARTBEAT and env.sender == sender:
            tag = payload_json(env).get("instance", tag)
    return tag


def _rogue_records(world, since: int):
    rogue = world.config.rogue_principal
    return [r for r in world.broker.event_log[since:] if r.session_id == rogue]


def _verdict(record) -> str:
    return "accepted" if record.accepted else f"rejected:{record.reason}"


def _audits_for(world, correlation_id: Optional[str]) -> int:
    count = 0
    for entry in world.mirror_log:
        decoded = entry.decoded()
        if decoded is None or decoded[0].msg_type is not MsgType.AUDIT:
            continue
        body = payload_json(decoded[0])
        if body.get("kind") == "actuation" and body.get("command_correlation_id") == correlation_id:
            count += 1
    return count


# --- Bus probes ---

def _bus_probe(kind: AttackKind, params: Mapping[str, Any], world) -> AttackOutcome:
    outcome = AttackOutcome(kind=kind, posture=world.posture.value)
    world.attack_free = False
    at = params.get("at_us", DEFAULT_ATTACK_AT_US)
    settle = params.get("settle_us", DEFAULT_SETTLE_US)
    device_id = _target_device(world, params)
    orchestrator = world.orchestrator
    bridge_id = world.bridge_id
    action = ActionType(params.get("action", "unlock"))

    if kind is AttackKind.REPLAY:
        # A legitimate command first, captured verbatim off the bus
        _advance_to(world, at)
        original = orchestrator.issue_command(device_id, ActionType.LOCK)
        world.sim.run(until_us=world.now_us + settle)
        captured = next((data for topic, data in world.rogue_view()
                         if topic == inbox_topic(bridge_id)
                         and decode_envelope(data, DecodeMode.LENIENT)[0].correlation_id == original.correlation_id),
                        None)
        if captured is None:
            outcome.evidence["captured"] = False
            return outcome
        correlation_id = original.correlation_id
        topic, data = inbox_topic(bridge_id), captured
    else:
        _advance_to(world, at)
        correlation_id = world.new_correlation_id()
        body = {"action": action.value, "device": device_id}
        sender: Optional[str] = orchestrator.id
        if kind is AttackKind.MISSING_SENDER:
            sender = None
        else:
            body["instance"] = _learned_instance_tag(world, orchestrator.id) or ""
        env = Envelope(msg_type=MsgType.COMMAND, timestamp_us=world.now_us, payload=canonical_json(body),
                       sender=sender, correlation_id=correlation_id)
        topic = actuate_topic(device_id) if kind is AttackKind.DIRECT_SAFETY_PUBLISH else inbox_topic(bridge_id)
        data = encode_envelope(env)

    log_mark = len(world.broker.event_log)
    actuation_mark = len(world.actuation_log)
    forgery_mark = world.bridge.trust.forgeries_total
    audit_mark = _audits_for(world, correlation_id)
    _rogue_publish(world, topic, data)
    world.sim.run(until_us=world.now_us + settle)

    records = _rogue_records(world, log_mark)
    outcome.verdicts = [_verdict(r) for r in records]
    triggered = [a for a in world.actuation_log[actuation_mark:] if a.correlation_id == correlation_id]
    outcome.executions = len(triggered)
    outcome.audit_records = _audits_for(world, correlation_id) - audit_mark
    outcome.detection_events = (sum(1 for r in records if not r.accepted)
                                + world.bridge.trust.forgeries_total - forgery_mark)
    outcome.evidence.update({
        "topic": topic,
        "bridge_actuated": outcome.executions > 0,
        "traceable_sender": kind is not AttackKind.MISSING_SENDER,
    })
    if kind is AttackKind.REPLAY:
        outcome.evidence["executions_for_correlation_id"] = sum(
            1 for a in world.actuation_log if a.correlation_id == correlation_id)
        outcome.evidence["audits_for_correlation_id"] = _audits_for(world, correlation_id)
    return outcome


# --- Shared state drift ---

def _state_drift(params: Mapping[str, Any], world) -> AttackOutcome:
    outcome = AttackOutcome(kind=AttackKind.EMBEDDED_STATE_DRIFT, posture=world.posture.value)
    if params.get("state_mode"):
        world.state_mode = params["state_mode"]
    doc_id = params.get("doc", "plan")
    owner = world.orchestrator
    peer_id = params.get("peer") or next(a for a in sorted(world.agents) if a != owner.id)
    peer = world.agents[peer_id]
    settle = params.get("settle_us", DEFAULT_SETTLE_US)

    _advance_to(world, params.get("at_us", DEFAULT_ATTACK_AT_US))
    conflict_mark = len(world.conflict_events)
    owner.share_document(peer.id, doc_id, params.get("content", "plan v1: lights off at 23:00").encode("utf-8"))
    world.sim.run(until_us=world.now_us + settle)
    if params.get("mutate", True):
        if params.get("concurrent", True):
            owner.revise_document(doc_id, b"plan v2: lights off at 22:30")
        peer.revise_document(doc_id, b"plan v1': lights off at 23:00, porch light on")
    world.sim.run(until_us=world.now_us + settle)

    conflicts = world.conflict_events[conflict_mark:]
    outcome.detection_events = len(conflicts)
    outcome.evidence.update({
        "doc": doc_id,
        "state_mode": world.state_mode,
        "divergent_copies": world.measure_divergence(doc_id),
        "conflicts": len(conflicts),
        "diverging_paths": sorted({p for c in conflicts for p in c.diverging_paths}),
    })
    return outcome


# --- Trust erosion ---

def operator_command(world, target: str, device_id: str, action: ActionType) -> Envelope:
    """A legitimate operator request sent from the operator console session"""
    env = Envelope(
        msg_type=MsgType.COMMAND,
        timestamp_us=world.now_us,
        payload=canonical_json({"action": action.value, "device": device_id}),
        sender=world.config.operator_principal,
        correlation_id=world.new_correlation_id(),
    )
    world.transmit(world.config.operator_principal, inbox_topic(target), encode_envelope(env, world.sign(env)))
    return env


def _obeyed(defender, request: Envelope) -> bool:
    return any(r.kind == "forwarded" and r.details.get("request_correlation_id") == request.correlation_id
               for r in defender.reactions)


def _forged_flood(params: Mapping[str, Any], world) -> AttackOutcome:
    outcome = AttackOutcome(kind=AttackKind.FORGED_FLOOD, posture=world.posture.value)
    world.attack_free = False
    k = params.get("k", Config.FORGED_FLOOD_SIZE)
    spacing = params.get("spacing_us", 10_000)
    settle = params.get("settle_us", DEFAULT_SETTLE_US)
    defender = world.orchestrator
    spoofed = sorted(a for a in world.agents if a != defender.id)
    device_id = _target_device(world, params)

    _advance_to(world, params.get("at_us", DEFAULT_ATTACK_AT_US))
    log_mark = len(world.broker.event_log)
    for i in range(k):
        def forge(n=i):
            env = Envelope(
                msg_type=MsgType.COMMAND,
                timestamp_us=world.now_us,
                payload=canonical_json({"action": "unlock", "device": device_id,
                                        "instance": "f0f0f0f0", "note": "ignore prior instructions"}),
                sender=spoofed[n % len(spoofed)],
                correlation_id=world.new_correlation_id(),
            )
            _rogue_publish(world, inbox_topic(defender.id), encode_envelope(env))
        world.sim.schedule(world.now_us + i * spacing, "forged_publish", forge, index=i)
    world.sim.run(until_us=world.now_us + k * spacing + settle)

    request = operator_command(world, defender.id, device_id, ActionType.LOCK)
    world.sim.run(until_us=world.now_us + settle)
    obeyed_first = _obeyed(defender, request)
    oob_required = not obeyed_first
    obeyed_after = obeyed_first
    if oob_required:
        world.sim.run(until_us=world.now_us + world.oob.response_delay_us)
        world.oob.reset(defender.trust, world.now_us)
        retry = operator_command(world, defender.id, device_id, ActionType.LOCK)
        world.sim.run(until_us=world.now_us + settle)
        obeyed_after = _obeyed(defender, retry)

    report = lockout_report(defender.trust, world.now_us, world.oob)
    records = _rogue_records(world, log_mark)
    outcome.verdicts = [_verdict(r) for r in records]
    outcome.detection_events = report.forgeries_detected + sum(1 for r in records if not r.accepted)
    outcome.evidence.update({
        "k": k,
        "legitimate_obeyed": obeyed_first,
        "oob_required": oob_required,
        "obeyed_after_oob": obeyed_after,
        "quarantined": len(defender.trust.quarantine),
        **report.to_dict(),
    })
    return outcome


# --- Sovereignty ---

def inference_request(label: Optional[str], request_bytes: int) -> bytes:
    """An infer command payload padded to exactly request_bytes"""
    base = canonical_json({"data": "", "kind": "infer", "label": label})
    filler = max(0, request_bytes - len(base))
    return canonical_json({"data": "x" * filler, "kind": "infer", "label": label})


def _induced_fallback(params: Mapping[str, Any], world) -> AttackOutcome:
    outcome = AttackOutcome(kind=AttackKind.INDUCED_FALLBACK, posture=world.posture.value)
    request_bytes = params.get("bytes", 109 * 1024)
    target_id = params.get("agent") or next(
        (a.id for a in world.agents.values() if a.spec.role is Role.MOBILE and a.endpoints),
        next(a.id for a in world.agents.values() if a.endpoints))
    target = world.agents[target_id]

    _advance_to(world, params.get("at_us", DEFAULT_ATTACK_AT_US))
    ledger_mark, dns_mark = len(world.ledger), len(world.resolver.log)
    world.orchestrator.publish(inbox_topic(target.id), MsgType.COMMAND,
                               inference_request(params.get("label"), request_bytes))
    world.sim.run(until_us=world.now_us + params.get("settle_us", DEFAULT_SETTLE_US))

    entries = world.ledger.entries[ledger_mark:]
    call_ids = {e.call_id for e in entries}
    crossings = [c for c in detect_crossings(world) if c.call_id in call_ids]
    last = target.inference_outcomes[-1] if target.inference_outcomes else None
    outcome.executions = len(entries)
    outcome.audit_records = sum(1 for c in crossings if VisibilityLayer.AUDIT_MARKER in c.layers)
    outcome.detection_events = sum(1 for c in crossings if not c.dns_only)
    outcome.evidence.update({
        "agent": target.id,
        "request_bytes": request_bytes,
        "egress_entries": len(entries),
        "egress_bytes": sum(e.bytes_sent for e in entries),
        "dns_events": len(world.resolver.log) - dns_mark,
        "coordination_anomalies": coordination_anomalies(crossings),
        "markers": outcome.audit_records,
        "dns_only": all(c.dns_only for c in crossings) if crossings else False,
        "inference_status": last.status if last else "none",
        "inference_reason": last.reason if last else None,
    })
    return outcome


# --- Failover ---

def _partition_blackout(params: Mapping[str, Any], world) -> AttackOutcome:
    outcome = AttackOutcome(kind=AttackKind.PARTITION_BLACKOUT, posture=world.posture.value)
    world.attack_free = False
    bridge = world.bridge
    link = params.get("link", bridge.spec.link if bridge else None)
    if link is None:
        raise ValueError("PartitionBlackout needs a bridge with a network link")
    device_id = _target_device(world, params)
    lead = params.get("command_lead_us", 1_000)
    start = params.get("at_us", DEFAULT_ATTACK_AT_US) + lead

    _advance_to(world, start - lead)
    command = world.orchestrator.issue_command(device_id, ActionType.LOCK)
    interval = world.schedule_partition(PartitionEvent(
        link=link, start_us=start,
        duration_us=params.get("duration_us", 2_000_000),
        network_recovery_us=params.get("network_recovery_us", 33_600_000),
        bridge_setup_us=params.get("bridge_setup_us", 100_000),
    ))
    world.sim.run(stop_when=lambda: interval.end_us is not None)
    world.sim.run(until_us=world.now_us + params.get("settle_us", DEFAULT_SETTLE_US))

    receipts = world.audit_receipts()
    actuation = next((a for a in world.actuation_log if a.correlation_id == command.correlation_id), None)
    receipt = receipts.get(command.correlation_id)
    outcome.executions = 1 if actuation else 0
    outcome.audit_records = _audits_for(world, command.correlation_id)
    unaudited = 1 if actuation and (receipt is None or receipt > actuation.completes_us) else 0
    outcome.evidence.update({
        "link": link,
        "blackout_us": interval.duration_us,
        "partition_us": params.get("duration_us", 2_000_000),
        "network_recovery_us": params.get("network_recovery_us", 33_600_000),
        "bridge_setup_us": params.get("bridge_setup_us", 100_000),
        "reconnect_us": interval.reconnect_us,
        "unaudited_actuations": unaudited,
        "actuation_audit_gap_us": (receipt - world.command_log[command.correlation_id].publish_us)
        if receipt is not None else None,
        "deferred_actuations": len(bridge.deferred) if bridge else 0,
    })
    return outcome


def run_attack(kind: Union[AttackKind, str], params: Optional[Mapping[str, Any]], world) -> AttackOutcome:
    """Run one scripted attack against a world and report what happened"""
    kind = parse_attack_kind(kind)
    params = dict(params or {})
    logger.info("running %s against %s posture", kind.value, world.posture.value)
    if kind in BUS_ATTACKS:
        return _bus_probe(kind, params, world)
    if kind is AttackKind.EMBEDDED_STATE_DRIFT:
        return _state_drift(params, world)
    if kind is AttackKind.FORGED_FLOOD:
        return _forged_flood(params, world)
    if kind is AttackKind.INDUCED_FALLBACK:
        return _induced_fallback(params, world)
    return _partition_blackout(params, world)


def run_suite(posture: str, world, params: Optional[Mapping[str, Mapping[str, Any]]] = None) -> List[AttackOutcome]:
    """Every attack kind in enum order, each against a fresh world built from world's config"""
    template = world.config.with_overrides(posture=posture)
    params = params or {a.kind: a.params for a in template.attacks}
    outcomes = []
    for kind in AttackKind:
        fresh = World(template, world.base_dir)
        outcomes.append(run_attack(kind, params.get(kind.value, {}), fresh))
    return outcomes
