"""The simulated swarm: broker, agents, devices and links driven by one event loop."""
import base64
import hashlib
import json
import logging
import os
import random
import uuid
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

from agents.base_agent import SHARED_REF, SwarmAgent
from agents.bridge_agent import BridgeAgent
from agents.inference import InferenceFailed
from agents.mobile_agent import MobileAgent
from agents.orchestrator_agent import OrchestratorAgent
from broker.broker import Broker
from config import Config
from models.agent_models import ActionType, AgentSpec, Device, DeviceKind, EndpointKind, EndpointSpec, Role
from models.broker_models import BrokerPolicy, Delivery, MirrorEntry, Posture
from models.envelope import AuthBlock, Envelope, MsgType
from models.netsim_models import BlackoutInterval, LinkProfile, PartitionEvent, ReconnectProfile
from models.scenario import AgentConfig, ScenarioConfig, resolve_scenario_path
from sim.engine import Simulator
from sim.links import Network, apply_partition, load_link_profiles
from sovereignty.egress import BoundaryPolicy, EgressCause, EgressLedger, FallbackMode, Resolver
from stateplane.store import StateStore, measure_divergence
from tools.envelope_codec import canonical_json, payload_json
from tools.signing import (
    CounterState, Keystore, SigningKey, derive_simulation_key, load_keystore, seeded_nonce_source,
    sign_envelope,
)
from tools.topics import least_privilege_acl, load_acl, parse_acl_lines
from trust.tiered_trust import OobChannel, TrustMode

logger = logging.getLogger(__name__)

AGENT_CLASSES = {
    Role.ORCHESTRATOR: OrchestratorAgent,
    Role.MOBILE: MobileAgent,
}


class InvariantViolation(RuntimeError):
    def __init__(self, violations: List[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


@dataclass(frozen=True)
class CommandLogEntry:
    correlation_id: str
    issuer: str
    target: str
    device_id: Optional[str]
    action: Optional[str]
    publish_us: int


def agent_spec_from_config(agent: AgentConfig) -> AgentSpec:
    return AgentSpec(
        id=agent.id,
        role=Role(agent.role),
        link=agent.link,
        inference=[EndpointSpec(kind=EndpointKind(e.kind), name=e.name, host=e.host,
                                context_capacity_bytes=e.context_capacity_bytes) for e in agent.inference],
        heartbeat_interval_us=agent.heartbeat_interval_us,
        key_id=agent.key_id,
        defer_when_unstable=agent.defer_when_unstable,
        stability_window_us=agent.stability_window_us,
    )


def build_keystore(config: ScenarioConfig, base_dir: Optional[str] = None) -> Keystore:
    """Declared keys win; otherwise every agent and the operator get a seed-derived key"""
    if config.keystore_file:
        return load_keystore(resolve_scenario_path(config.keystore_file, base_dir))
    if config.keys:
        return Keystore(SigningKey(key_id=k.key_id, sender=k.sender, secret=bytes.fromhex(k.hex))
                        for k in config.keys)
    principals = [agent.id for agent in config.agents] + [config.operator_principal]
    return Keystore(derive_simulation_key(config.seed, principal) for principal in principals)


def build_acl(config: ScenarioConfig, base_dir: Optional[str] = None):
    if config.acl is not None:
        return parse_acl_lines(config.acl)
    if config.acl_file:
        return load_acl(resolve_scenario_path(config.acl_file, base_dir))
    # The rogue is a swarm member: it may reach inboxes like the operator, nothing else
    return least_privilege_acl(
        [(agent.id, agent.role) for agent in config.agents],
        [(config.operator_principal, "operator"), (config.rogue_principal, "operator"),
         (config.supervisor_principal, "supervisor")],
    )


def build_link_profiles(config: ScenarioConfig) -> Dict[str, LinkProfile]:
    profiles = load_link_profiles()
    for name, link in config.links.items():
        profiles[name] = LinkProfile(name=name, **link.model_dump())
    return profiles


class World:
    def __init__(self, config: ScenarioConfig, base_dir: Optional[str] = None):
        self.config = config
        self.base_dir = base_dir
        seed = config.seed
        self.sim = Simulator()
        self.network = Network(build_link_profiles(config),
                               ReconnectProfile(config.reconnect.mean_us, config.reconnect.sigma_us),
                               random.Random(f"{seed}:net"))
        self._ids = random.Random(f"{seed}:ids")
        self.posture = Posture(config.posture)
        self.trust_mode = TrustMode(config.trust_mode)
        self.state_mode = config.effective_state_mode
        self.keystore = build_keystore(config, base_dir)
        self.counters = CounterState()
        self._nonces = seeded_nonce_source(random.Random(f"{seed}:nonce"))
        policy = BrokerPolicy(mode=self.posture, acl=build_acl(config, base_dir),
                              keystore=self.keystore if self.posture is Posture.HARDENED else Keystore())
        self.broker = Broker(policy, self.network.sample_reconnect_delay)
        self.boundary = BoundaryPolicy(FallbackMode(config.boundary.cloud_fallback),
                                       frozenset(config.boundary.sensitive_labels))
        self.resolver = Resolver(hosts=dict(config.boundary.hosts), retry_count=config.boundary.retry_count)
        self.ledger = EgressLedger()
        self.oob = OobChannel(config.trust.oob_response_delay_us)
        self.store = StateStore(authors=[agent.id for agent in config.agents])
        self.store.create_ref(SHARED_REF)

        self.conflict_events = []
        self.mirror_log: List[MirrorEntry] = []
        self.command_log: Dict[str, CommandLogEntry] = {}
        self.actuation_log = []
        self.drops: List[dict] = []
        self.rogue_captures: List[Tuple[int, str, bytes]] = []
        self.inference_failures: List[dict] = []
        self.blackouts: List[BlackoutInterval] = []
        self.operation_count = 0
        self.attack_free = True
        self._last_arrival: Dict[Tuple[str, str], int] = {}
        self._handlers: Dict[str, Callable[[str, bytes], None]] = {}
        self._started = False

        self.devices: Dict[str, Device] = {
            d.id: Device(id=d.id, kind=DeviceKind(d.kind), actuation_duration_us=d.actuation_duration_us)
            for d in config.devices
        }
        self.agents: Dict[str, SwarmAgent] = {}
        for agent_config in config.agents:
            spec = agent_spec_from_config(agent_config)
            if spec.role is Role.BRIDGE:
                agent = BridgeAgent(spec, self, self.devices)
            else:
                agent = AGENT_CLASSES[spec.role](spec, self)
            self.agents[spec.id] = agent
        self._connect_sessions()

    # --- Wiring ---

    def _connect_sessions(self) -> None:
        for agent in self.agents.values():
            self.broker.connect(agent.id, agent.id, agent.spec.link)
            self._handlers[agent.id] = agent.on_message
            for topic_filter in agent.subscriptions():
                self.broker.subscribe(agent.id, topic_filter)

        supervisor = self.config.supervisor_principal
        self.broker.connect(supervisor, supervisor)
        self.broker.subscribe(supervisor, Config.MIRROR_TOPIC)
        self._handlers[supervisor] = self._on_mirror

        self.broker.connect(self.config.operator_principal, self.config.operator_principal)

        rogue = self.config.rogue_principal
        self.broker.connect(rogue, rogue)
        for topic_filter in (Config.MIRROR_TOPIC, Config.BROADCAST_TOPIC):
            self.broker.subscribe(rogue, topic_filter)
        self._handlers[rogue] = self._on_rogue

    @property
    def now_us(self) -> int:
        return self.sim.now_us

    @property
    def duration_us(self) -> int:
        return self.config.duration_us

    @property
    def echo_timeout_us(self) -> int:
        return self.config.latency.timeout_us if self.config.latency else Config.ECHO_TIMEOUT_US

    @property
    def orchestrator(self) -> OrchestratorAgent:
        return next(a for a in self.agents.values() if a.spec.role is Role.ORCHESTRATOR)

    @property
    def bridge(self) -> Optional[BridgeAgent]:
        return next((a for a in self.agents.values() if a.spec.role is Role.BRIDGE), None)

    @property
    def bridge_id(self) -> Optional[str]:
        bridge = self.bridge
        return bridge.id if bridge else None

    def instance_tag_for(self, agent_id: str) -> str:
        """Tag an agent puts in its heartbeats and commands, bound to its id"""
        draw = self._ids.getrandbits(32)
        return hashlib.sha256(f"{agent_id}:{draw:08x}".encode("utf-8")).hexdigest()[:8]

    def new_correlation_id(self) -> str:
        return uuid.UUID(int=self._ids.getrandbits(128)).hex

    def count_operation(self) -> None:
        self.operation_count += 1

    def record_command(self, env: Envelope, target: str) -> None:
        body = payload_json(env)
        self.command_log[env.correlation_id] = CommandLogEntry(
            correlation_id=env.correlation_id, issuer=env.sender, target=target,
            device_id=body.get("device"), action=body.get("action"), publish_us=self.now_us,
        )
        self.count_operation()

    def sign(self, env: Envelope) -> Optional[AuthBlock]:
        """Agents sign only when something on the path verifies"""
        if self.posture is not Posture.HARDENED and self.trust_mode is not TrustMode.HARDENED:
            return None
        if env.sender is None:
            return None
        agent = self.agents.get(env.sender)
        if agent is not None and agent.spec.key_id is not None:
            key = self.keystore.get(agent.spec.key_id)
        else:
            key = self.keystore.key_for_sender(env.sender)
        if key is None:
            return None
        return sign_envelope(env, key, self.counters, self._nonces)

    # --- Transport ---

    def _fifo(self, key: Tuple[str, str], t_us: int) -> int:
        """Per-connection ordering: nothing overtakes an earlier message on the same session"""
        t_us = max(t_us, self._last_arrival.get(key, 0))
        self._last_arrival[key] = t_us
        return t_us

    def _drop(self, stage: str, session_id: str, topic: str) -> None:
        self.drops.append({"time_us": self.now_us, "stage": stage, "session": session_id, "topic": topic})
        logger.debug("dropped %s message for %s on %s", stage, session_id, topic)

    def transmit(self, session_id: str, topic: str, data: bytes, durable: bool = False) -> bool:
        """Send a publish towards the broker; False when it could not depart"""
        session = self.broker.sessions[session_id]
        if self.network.is_down(session.link, self.now_us) or not session.connected:
            if durable and session_id in self.agents:
                self.agents[session_id].outbox.append((topic, data))
            else:
                self._drop("uplink", session_id, topic)
            return False
        latency = self.network.hop(session.link, len(data))
        if latency is None:
            self._drop("lost", session_id, topic)
            return False
        arrive = self._fifo(("up", session_id), self.now_us + latency)
        self.sim.schedule(arrive, "publish", lambda: self._at_broker(session_id, topic, data),
                          session=session_id, topic=topic, bytes=len(data))
        return True

    def _at_broker(self, session_id: str, topic: str, data: bytes) -> None:
        if not self.broker.sessions[session_id].connected:
            self._drop("session_parked", session_id, topic)
            return
        record = self.broker.publish(session_id, topic, data, self.now_us)
        for delivery in record.deliveries:
            self._downlink(delivery)
        for missed in record.missed:
            self._drop("parked_subscriber", missed, topic)

    def _downlink(self, delivery: Delivery) -> None:
        link = self.broker.sessions[delivery.session_id].link
        if self.network.is_down(link, self.now_us):
            self._drop("downlink", delivery.session_id, delivery.topic)
            return
        latency = self.network.hop(link, len(delivery.data))
        if latency is None:
            self._drop("lost", delivery.session_id, delivery.topic)
            return
        arrive = self._fifo(("down", delivery.session_id), self.now_us + latency)
        handler = self._handlers.get(delivery.session_id)
        if handler is None:
            return
        self.sim.schedule(arrive, "deliver", lambda: handler(delivery.topic, delivery.data),
                          session=delivery.session_id, topic=delivery.topic)

    def _on_mirror(self, topic: str, data: bytes) -> None:
        doc = json.loads(data)
        self.mirror_log.append(MirrorEntry(receipt_us=self.now_us, topic=doc["topic"],
                                           broker_ts_us=doc["broker_ts_us"],
                                           data=base64.b64decode(doc["message"])))

    def _on_rogue(self, topic: str, data: bytes) -> None:
        self.rogue_captures.append((self.now_us, topic, data))

    def rogue_view(self) -> List[Tuple[str, bytes]]:
        """What the rogue can read: its own mirror subscription, or a passive tap when the broker denied it"""
        if Config.MIRROR_TOPIC in self.broker.sessions[self.config.rogue_principal].subscriptions:
            views = []
            for _, topic, data in self.rogue_captures:
                if topic == Config.MIRROR_TOPIC:
                    doc = json.loads(data)
                    views.append((doc["topic"], base64.b64decode(doc["message"])))
            return views
        return [(entry.topic, entry.data) for entry in self.mirror_log]

    # --- Partitions ---

    def on_link_down(self, link: str) -> None:
        for session in self.broker.sessions.values():
            if session.link == link and session.connected:
                self.broker.disconnect(session.session_id)

    def on_link_up(self, link: str, interval: BlackoutInterval) -> None:
        for session in list(self.broker.sessions.values()):
            if session.link != link:
                continue
            delay = self.broker.reconnect(session.session_id)
            self.sim.schedule_in(delay, "session_restored",
                                 lambda sid=session.session_id, d=delay: self._restored(sid, interval, d),
                                 session=session.session_id, reconnect_us=delay)

    def _restored(self, session_id: str, interval: BlackoutInterval, delay: int) -> None:
        self.broker.restore(session_id)
        interval.reconnect_us = max(interval.reconnect_us or 0, delay)
        interval.end_us = max(interval.end_us or 0, self.now_us)
        agent = self.agents.get(session_id)
        if agent is not None:
            agent.flush_outbox()

    def schedule_partition(self, partition: PartitionEvent) -> BlackoutInterval:
        interval = apply_partition(self, partition)
        self.blackouts.append(interval)
        return interval

    # --- Scenario driving ---

    def start(self) -> None:
        if self._started:
            return
        self._started = True
        for agent in self.agents.values():
            agent.start()
        self._schedule_workload()
        for p in self.config.partitions:
            self.schedule_partition(PartitionEvent(link=p.link, start_us=p.start_us, duration_us=p.duration_us,
                                                   network_recovery_us=p.network_recovery_us,
                                                   bridge_setup_us=p.bridge_setup_us))
            if p.safety_command:
                device_id = p.safety_command
                self.sim.schedule(max(0, p.start_us - p.command_lead_us), "safety_command",
                                  lambda d=device_id: self.orchestrator.issue_command(d, ActionType.LOCK),
                                  device=device_id)

    def _schedule_workload(self) -> None:
        workload = self.config.workload
        cursor = workload.start_us
        step = workload.interval_us
        devices = workload.command_devices or [d.id for d in self.devices.values() if d.kind is not DeviceKind.SENSOR]
        if workload.commands and devices and self.bridge is not None:
            for i in range(workload.commands):
                action = ActionType(workload.actions[i % len(workload.actions)])
                device_id = devices[i % len(devices)]
                level = 50 if action is ActionType.SET_LEVEL else None
                self.sim.schedule(cursor, "workload_command",
                                  lambda d=device_id, a=action, lv=level: self.orchestrator.issue_command(d, a, level=lv),
                                  device=device_id, action=action.value)
                cursor += step
        agents = sorted(self.agents)
        for i in range(workload.status_publishes):
            agent = self.agents[agents[i % len(agents)]]
            self.sim.schedule(cursor, "workload_status", lambda a=agent, n=i: self._status(a, n), agent=agent.id)
            cursor += step
        sensors = [d.id for d in self.devices.values() if d.kind is DeviceKind.SENSOR] or sorted(self.devices)
        if self.bridge is not None and sensors:
            for i in range(workload.sensor_reads):
                device_id = sensors[i % len(sensors)]
                self.sim.schedule(cursor, "workload_sensor_read",
                                  lambda d=device_id: self.bridge.sensor_read(d), device=device_id)
                cursor += step
        if workload.inference_calls:
            agent = self.agents[workload.inference_agent or self.orchestrator.id]
            for i in range(workload.inference_calls):
                self.sim.schedule(cursor, "workload_inference",
                                  lambda a=agent: self.infer(a, workload.inference_bytes, workload.inference_label),
                                  agent=agent.id, bytes=workload.inference_bytes)
                cursor += step

    def _status(self, agent: SwarmAgent, n: int) -> None:
        self.count_operation()
        agent.publish(Config.BROADCAST_TOPIC, MsgType.STATUS, {"kind": "status", "seq": n, "state": "ok"})

    def infer(self, agent: SwarmAgent, request_bytes: int, label: Optional[str] = None):
        try:
            return agent.run_inference(request_bytes, label)
        except InferenceFailed as exc:
            self.inference_failures.append({"time_us": self.now_us, "agent": agent.id, "reason": exc.reason})
            return None

    def run(self, until_us: Optional[int] = None) -> int:
        """Run to the configured duration, then let in-flight work drain"""
        self.start()
        processed = self.sim.run(until_us=until_us or self.duration_us)
        if until_us is None:
            processed += self.sim.run()
        return processed

    # --- Post-run views ---

    def audit_receipts(self) -> Dict[str, int]:
        """Command correlation id -> first time its actuation audit reached the mirror"""
        receipts: Dict[str, int] = {}
        for entry in self.mirror_log:
            decoded = entry.decoded()
            if decoded is None or decoded[0].msg_type is not MsgType.AUDIT:
                continue
            body = payload_json(decoded[0])
            cid = body.get("command_correlation_id")
            if body.get("kind") == "actuation" and isinstance(cid, str):
                receipts.setdefault(cid, entry.receipt_us)
        return receipts

    def unaudited_actuations(self) -> int:
        """Actuations physically complete before any monitor could see their audit"""
        receipts = self.audit_receipts()
        return sum(1 for a in self.actuation_log
                   if a.correlation_id not in receipts or receipts[a.correlation_id] > a.completes_us)

    def document_views(self, doc_id: str) -> Dict[str, bytes]:
        views = {}
        for agent_id, agent in self.agents.items():
            view = agent.view_of(doc_id)
            if view is not None:
                views[agent_id] = view
        return views

    def measure_divergence(self, doc_id: str) -> int:
        return measure_divergence(self.document_views(doc_id))

    def check_invariants(self) -> List[str]:
        violations = []
        times = [record["time_us"] for record in self.sim.trace]
        if any(b < a for a, b in zip(times, times[1:])):
            violations.append("virtual clock moved backwards")
        if self.boundary.cloud_fallback is FallbackMode.FORBID and len(self.ledger):
            violations.append("cloud egress recorded under a forbid policy")
        if self.boundary.cloud_fallback is FallbackMode.ALLOW_WITH_MARKER:
            markers = sum(1 for a in self.agents.values() for o in a.inference_outcomes if o.marker_published)
            if markers != len(self.ledger):
                violations.append(f"{markers} boundary markers for {len(self.ledger)} egress entries")
        if self.config.architecture == "edge_local" and self.attack_free:
            stray = [e for e in self.ledger.entries if e.cause is not EgressCause.INFERENCE_FALLBACK]
            if stray:
                violations.append(f"edge_local run sent {sum(e.bytes_sent for e in stray)} B off the mesh "
                                  f"outside inference fallback")
        for interval in self.blackouts:
            if interval.end_us is None:
                continue
            partition = next(p for p in self.network.partitions[interval.link] if p.start_us == interval.start_us)
            expected = partition.link_down_until_us - partition.start_us + (interval.reconnect_us or 0)
            if interval.duration_us != expected:
                violations.append(f"blackout on {interval.link} is {interval.duration_us}us, phases sum to {expected}us")
        if self.attack_free:
            cids = [a.correlation_id for a in self.actuation_log]
            if len(cids) != len(set(cids)):
                violations.append("an attack-free run executed one command more than once")
            unknown = [cid for cid in cids if cid not in self.command_log]
            if unknown:
                violations.append(f"{len(unknown)} actuations without an issuing command")
        return violations

    # --- Artifacts ---

    def export(self, out_dir: str) -> Dict[str, str]:
        os.makedirs(out_dir, exist_ok=True)
        artifacts = {
            "trace": "trace.jsonl",
            "broker_log": "broker_log.jsonl",
            "ledger": "ledger.jsonl",
            "dns": "dns.jsonl",
            "drops": "drops.jsonl",
        }
        self.sim.export_trace(os.path.join(out_dir, artifacts["trace"]))
        self.broker.export_log(os.path.join(out_dir, artifacts["broker_log"]))
        self.ledger.export(os.path.join(out_dir, artifacts["ledger"]))
        self.resolver.export(os.path.join(out_dir, artifacts["dns"]))
        with open(os.path.join(out_dir, artifacts["drops"]), "wb") as fh:
            for drop in self.drops:
                fh.write(canonical_json(drop) + b"\n")
        if self.store.commits:
            artifacts["state"] = "state"
            self.store.export(os.path.join(out_dir, artifacts["state"]))
        return artifacts


def reconnect_benchmark(world: World, agent_id: str, n: int, block_durations_us: List[int]) -> Dict[str, object]:
    """Block an agent's link repeatedly and collect the client reconnect delays"""
    link = world.agents[agent_id].spec.link
    if link is None:
        raise ValueError(f"agent {agent_id!r} is co-located with the broker and has no link to block")
    world.start()
    delays: List[int] = []
    per_block: Dict[int, List[int]] = {}
    for block in block_durations_us:
        for _ in range(n):
            start = world.now_us + 1_000
            interval = world.schedule_partition(PartitionEvent(link=link, start_us=start, duration_us=block))
            world.sim.run(stop_when=lambda: interval.end_us is not None)
            delays.append(interval.reconnect_us)
            per_block.setdefault(block, []).append(interval.reconnect_us)
    return {"delays": delays, "per_block": per_block}
