"""Shared agent runtime: inbox dispatch, heartbeats, trust gating, shared documents and inference."""
import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

from agents.inference import InferenceEndpoint, InferenceFailed, InferenceOutcome, LocalModelCancelled
from config import Config
from models.agent_models import AgentSpec, Reaction
from models.envelope import AuthBlock, Envelope, EnvelopeError, MsgType
from sovereignty.egress import EgressCause, EgressDecision, EgressEntry, authorize_egress
from stateplane.store import ConflictReport, StateRef
from tools.envelope_codec import DecodeMode, canonical_json, decode_envelope, encode_envelope, payload_json
from tools.signing import ReplayState, verify_envelope
from tools.topics import inbox_topic
from trust.tiered_trust import TrustDecision, TrustMode, TrustState, assess

logger = logging.getLogger(__name__)

SHARED_REF = "shared"


@dataclass(frozen=True)
class Outgoing:
    envelope: Envelope
    departed: bool


class SwarmAgent:
    """Event-driven agent state machine; every method runs inside one simulator event"""

    def __init__(self, spec: AgentSpec, world):
        self.spec = spec
        self.world = world
        self.id = spec.id
        self.instance_tag = world.instance_tag_for(spec.id)
        self.trust = TrustState(mode=world.trust_mode, threshold=world.config.trust.distrust_threshold)
        self.replay_state = ReplayState()
        self.endpoints = [InferenceEndpoint(endpoint) for endpoint in spec.inference]
        self.outbox: List[Tuple[str, bytes]] = []
        self.reactions: List[Reaction] = []
        self.inference_outcomes: List[InferenceOutcome] = []
        self.views: Dict[str, bytes] = {}
        self.state_refs: Dict[str, StateRef] = {}
        self.heartbeats_sent = 0
        self.missed_heartbeats = 0
        self.heartbeat_arrivals: Dict[str, List[int]] = {}
        self.ignored = 0
        self.malformed = 0

    # --- Wiring ---

    @property
    def inbox(self) -> str:
        return inbox_topic(self.id)

    def subscriptions(self) -> List[str]:
        return [self.inbox, Config.BROADCAST_TOPIC]

    def start(self) -> None:
        self.world.sim.schedule(0, "heartbeat", self.heartbeat_tick, agent=self.id)

    # --- Publishing ---

    def envelope(self, msg_type: MsgType, body: Union[bytes, Mapping[str, Any]],
                 correlation_id: Optional[str] = None, timestamp_us: Optional[int] = None) -> Envelope:
        payload = body if isinstance(body, bytes) else canonical_json(dict(body))
        return Envelope(
            msg_type=msg_type,
            timestamp_us=self.world.now_us if timestamp_us is None else timestamp_us,
            payload=payload,
            sender=self.id,
            correlation_id=correlation_id or self.world.new_correlation_id(),
        )

    def send(self, topic: str, env: Envelope, durable: bool = False) -> Outgoing:
        data = encode_envelope(env, self.world.sign(env))
        return Outgoing(env, self.world.transmit(self.id, topic, data, durable=durable))

    def publish(self, topic: str, msg_type: MsgType, body: Union[bytes, Mapping[str, Any]],
                correlation_id: Optional[str] = None, durable: bool = False) -> Outgoing:
        return self.send(topic, self.envelope(msg_type, body, correlation_id), durable=durable)

    def flush_outbox(self) -> int:
        """Re-send durable messages buffered while disconnected; returns how many departed"""
        pending, self.outbox = self.outbox, []
        sent = 0
        for topic, data in pending:
            if self.world.transmit(self.id, topic, data, durable=True):
                sent += 1
        if pending:
            logger.info("%s flushed %d/%d buffered messages", self.id, sent, len(pending))
        return sent

    # --- Heartbeats ---

    def heartbeat_tick(self) -> None:
        seq = self.heartbeats_sent + self.missed_heartbeats
        result = self.publish(Config.BROADCAST_TOPIC, MsgType.HEARTBEAT,
                              {"instance": self.instance_tag, "seq": seq})
        if result.departed:
            self.heartbeats_sent += 1
        else:
            self.missed_heartbeats += 1
            logger.debug("%s missed heartbeat %d", self.id, seq)
        next_tick = self.world.now_us + self.spec.heartbeat_interval_us
        if next_tick < self.world.duration_us:
            self.world.sim.schedule(next_tick, "heartbeat", self.heartbeat_tick, agent=self.id)

    # --- Inbound ---

    def on_message(self, topic: str, data: bytes) -> None:
        try:
            env, auth = decode_envelope(data, DecodeMode.LENIENT)
        except EnvelopeError as exc:
            self.malformed += 1
            logger.debug("%s dropped malformed message on %s: %s", self.id, topic, exc)
            return
        if topic == Config.BROADCAST_TOPIC:
            if env.msg_type is MsgType.HEARTBEAT and env.sender not in (None, self.id):
                self.trust.observe_heartbeat(env)
                self.heartbeat_arrivals.setdefault(env.sender, []).append(self.world.now_us)
            return
        self.reactions.extend(self.handle_inbox(env, auth, topic))

    def handle_inbox(self, env: Envelope, auth: Optional[AuthBlock], topic: str) -> List[Reaction]:
        if env.msg_type is MsgType.ECHO_PROBE:
            return self._echo(env)
        if env.msg_type is MsgType.COMMAND:
            return self._command(env, auth, topic)
        if env.msg_type is MsgType.STATE_REF:
            return self._receive_state(env)
        return self.handle_other(env)

    def handle_other(self, env: Envelope) -> List[Reaction]:
        self.ignored += 1
        return [Reaction("ignored", {"msg_type": env.msg_type.value})]

    def _echo(self, env: Envelope) -> List[Reaction]:
        if env.sender is None:
            self.ignored += 1
            return [Reaction("ignored", {"msg_type": env.msg_type.value, "why": "no reply address"})]
        reply = Envelope(
            msg_type=MsgType.ECHO_REPLY,
            timestamp_us=env.timestamp_us,
            payload=env.payload,
            sender=self.id,
            correlation_id=env.correlation_id,
        )
        self.send(inbox_topic(env.sender), reply)
        return [Reaction("echoed", {"correlation_id": env.correlation_id})]

    def _command(self, env: Envelope, auth: Optional[AuthBlock], topic: str) -> List[Reaction]:
        decision = self.assess(env, auth)
        if decision is TrustDecision.ACCEPT:
            return self.execute(env, topic)
        if decision is TrustDecision.REQUIRE_OOB:
            oob = self.world.oob
            self.world.sim.schedule_in(oob.response_delay_us, "oob_confirmation",
                                       lambda: self._confirmed(env, topic), agent=self.id)
            return [Reaction("awaiting_oob", {"correlation_id": env.correlation_id})]
        if decision is TrustDecision.REFUSE:
            logger.warning("%s refused command %s from %s", self.id, env.correlation_id, env.sender)
        return [Reaction(decision.value, {"correlation_id": env.correlation_id, "sender": env.sender})]

    def _confirmed(self, env: Envelope, topic: str) -> None:
        if self.world.oob.confirm(self.trust, env, self.world.now_us):
            self.reactions.extend(self.execute(env, topic))

    def assess(self, env: Envelope, auth: Optional[AuthBlock]) -> TrustDecision:
        verification = None
        if self.world.trust_mode is TrustMode.HARDENED:
            verification = verify_envelope(env, auth, self.world.keystore, self.replay_state)
        return assess(self.trust, env, verification, self.world.now_us)

    def execute(self, env: Envelope, topic: str) -> List[Reaction]:
        """Role-specific command handling"""
        return self.handle_other(env)

    # --- Shared documents ---

    def share_document(self, target: str, doc_id: str, content: bytes) -> Outgoing:
        """Hand a document to a peer: a full copy in embedded mode, a state reference otherwise"""
        if self.world.state_mode == "embedded":
            self.views[doc_id] = content
            body = {"doc": doc_id, "embedded": content.decode("utf-8")}
        else:
            store = self.world.store
            head = store.ref(SHARED_REF).current
            result = store.commit(SHARED_REF, head, self.id, {doc_id: content},
                                  self.world.now_us, f"share {doc_id}")
            if isinstance(result, ConflictReport):
                self.world.conflict_events.append(result)
                head = store.ref(SHARED_REF).current
            else:
                head = result
            state_ref = StateRef(ref=SHARED_REF, commit_id=head, path=doc_id)
            self.state_refs[doc_id] = state_ref
            body = {"doc": doc_id, **state_ref.to_payload()}
        return self.publish(inbox_topic(target), MsgType.STATE_REF, body)

    def _receive_state(self, env: Envelope) -> List[Reaction]:
        body = payload_json(env)
        doc_id = body.get("doc")
        if not isinstance(doc_id, str):
            self.malformed += 1
            return [Reaction("malformed", {"msg_type": env.msg_type.value})]
        if "embedded" in body:
            self.views[doc_id] = str(body["embedded"]).encode("utf-8")
        else:
            self.state_refs[doc_id] = StateRef.from_payload(body)
        return [Reaction("state_received", {"doc": doc_id})]

    def revise_document(self, doc_id: str, content: bytes) -> Optional[ConflictReport]:
        """Change this agent's copy; in state-plane mode this is a CAS commit"""
        if self.world.state_mode == "embedded":
            self.views[doc_id] = content
            return None
        current = self.state_refs.get(doc_id)
        expected = current.commit_id if current else None
        result = self.world.store.commit(SHARED_REF, expected, self.id, {doc_id: content},
                                         self.world.now_us, f"revise {doc_id}")
        if isinstance(result, ConflictReport):
            self.world.conflict_events.append(result)
            self.reactions.append(Reaction("conflict", result.to_dict()))
            return result
        self.state_refs[doc_id] = StateRef(ref=SHARED_REF, commit_id=result, path=doc_id)
        return None

    def view_of(self, doc_id: str) -> Optional[bytes]:
        if self.world.state_mode == "embedded":
            return self.views.get(doc_id)
        state_ref = self.state_refs.get(doc_id)
        if state_ref is None:
            return None
        return self.world.store.read(state_ref.ref, state_ref.path)

    # --- Inference ---

    def run_inference(self, request_bytes: int, label: Optional[str] = None) -> InferenceOutcome:
        """Walk the endpoint chain; local first, cloud only as the policy allows"""
        if not self.endpoints:
            raise InferenceFailed("no_inference_chain")
        world = self.world
        outcome = InferenceOutcome(call_id=world.new_correlation_id(), request_bytes=request_bytes)
        self.inference_outcomes.append(outcome)
        world.count_operation()
        tried_local = False
        for endpoint in self.endpoints:
            outcome.attempts.append(endpoint.spec.name)
            if endpoint.is_local:
                tried_local = True
                try:
                    outcome.text = endpoint.invoke(self.id, request_bytes, label)
                except LocalModelCancelled as exc:
                    logger.warning("%s local model cancelled (%d): %d B", self.id, exc.status_code, request_bytes)
                    continue
                outcome.endpoint, outcome.status = endpoint.spec.name, "local"
                return outcome

            host = endpoint.spec.host
            decision = authorize_egress(world.boundary, self.id, host, label, request_bytes)
            if decision is EgressDecision.DENY:
                outcome.status, outcome.reason = "failed", "sovereignty_denied"
                raise InferenceFailed("sovereignty_denied")
            dns_before = len(world.resolver.log)
            address = world.resolver.resolve(self.id, host, world.now_us, outcome.call_id)
            cause = EgressCause.INFERENCE_FALLBACK if tried_local else EgressCause.CLOUD_API
            world.ledger.append(EgressEntry(
                timestamp_us=world.now_us,
                source_agent=self.id,
                destination_host=host,
                destination_address=address,
                bytes_sent=request_bytes,
                cause=cause,
                call_id=outcome.call_id,
            ))
            outcome.dns_events = len(world.resolver.log) - dns_before
            outcome.egress_bytes = request_bytes
            if decision is EgressDecision.ALLOW_MARKED:
                self.publish(Config.AUDIT_TOPIC, MsgType.AUDIT, {
                    "kind": "boundary_crossing",
                    "call_id": outcome.call_id,
                    "host": host,
                    "bytes": request_bytes,
                    "cause": cause.value,
                }, durable=True)
                outcome.marker_published = True
            outcome.text = endpoint.invoke(self.id, request_bytes, label)
            outcome.endpoint, outcome.status = endpoint.spec.name, "cloud"
            return outcome

        outcome.status, outcome.reason = "failed", "no_endpoint"
        raise InferenceFailed("no_endpoint")
