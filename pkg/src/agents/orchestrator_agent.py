import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

from agents.base_agent import SwarmAgent
from models.agent_models import ActionType, Reaction
from models.envelope import Envelope, MsgType
from tools.envelope_codec import payload_json
from tools.topics import inbox_topic

logger = logging.getLogger(__name__)


@dataclass
class EchoResult:
    target: str
    payload_size: int
    requested: int
    samples: List[int] = field(default_factory=list)
    timeouts: int = 0

    @property
    def done(self) -> bool:
        return len(self.samples) + self.timeouts >= self.requested

    def to_dict(self) -> dict:
        return {"target": self.target, "payload_size": self.payload_size, "requested": self.requested,
                "samples": list(self.samples), "timeouts": self.timeouts}


@dataclass
class BurstResult(EchoResult):
    spacing_us: int = 0

    @property
    def degradation_us(self) -> float:
        """Mean of the last decile minus mean of the first decile"""
        decile = max(1, len(self.samples) // 10)
        if len(self.samples) < 2:
            return 0.0
        first, last = self.samples[:decile], self.samples[-decile:]
        return sum(last) / len(last) - sum(first) / len(first)

    def to_dict(self) -> dict:
        doc = super().to_dict()
        doc.update({"spacing_us": self.spacing_us, "degradation_us": round(self.degradation_us, 3)})
        return doc


def probe_filler(payload_size: int) -> bytes:
    return b"x" * payload_size


class OrchestratorAgent(SwarmAgent):
    """Issues commands, forwards operator requests and runs the echo benchmarks"""

    def __init__(self, spec, world):
        super().__init__(spec, world)
        self.outstanding: Dict[str, int] = {}
        self.orphan_replies = 0
        self._on_reply: Dict[str, Callable[[Optional[int]], None]] = {}

    # --- Commands ---

    def issue_command(self, device_id: str, action: ActionType, target: Optional[str] = None,
                      level: Optional[int] = None) -> Envelope:
        target = target or self.world.bridge_id
        body = {"action": action.value, "device": device_id, "instance": self.instance_tag}
        if level is not None:
            body["level"] = level
        result = self.publish(inbox_topic(target), MsgType.COMMAND, body)
        self.world.record_command(result.envelope, target)
        return result.envelope

    def execute(self, env: Envelope, topic: str) -> List[Reaction]:
        """Operator requests are relayed to the bridge as fresh commands"""
        body = payload_json(env)
        device_id = body.get("device")
        try:
            action = ActionType(body.get("action"))
        except ValueError:
            return self.handle_other(env)
        if not isinstance(device_id, str):
            return self.handle_other(env)
        forwarded = self.issue_command(device_id, action, level=body.get("level"))
        return [Reaction("forwarded", {"request_correlation_id": env.correlation_id,
                                       "command_correlation_id": forwarded.correlation_id})]

    # --- Echo probes ---

    def send_probe(self, target: str, payload_size: int, on_reply: Callable[[Optional[int]], None],
                   timeout_us: int) -> str:
        env = self.envelope(MsgType.ECHO_PROBE, probe_filler(payload_size))
        cid = env.correlation_id
        self.outstanding[cid] = self.world.now_us
        self._on_reply[cid] = on_reply
        self.send(inbox_topic(target), env)
        self.world.sim.schedule_in(timeout_us, "probe_timeout", lambda: self._expire(cid), correlation_id=cid)
        return cid

    def _expire(self, cid: str) -> None:
        if self.outstanding.pop(cid, None) is None:
            return
        logger.debug("probe %s timed out", cid)
        self._on_reply.pop(cid)(None)

    def handle_other(self, env: Envelope) -> List[Reaction]:
        if env.msg_type is not MsgType.ECHO_REPLY:
            return super().handle_other(env)
        sent_at = self.outstanding.pop(env.correlation_id, None)
        if sent_at is None:
            self.orphan_replies += 1
            return [Reaction("orphan_reply", {"correlation_id": env.correlation_id})]
        rtt = self.world.now_us - sent_at
        self._on_reply.pop(env.correlation_id)(rtt)
        return [Reaction("echo_sample", {"correlation_id": env.correlation_id, "rtt_us": rtt})]


def run_echo_benchmark(orchestrator: OrchestratorAgent, target: str, payload_size: int, n: int,
                       world, timeout_us: Optional[int] = None) -> EchoResult:
    """Sequential probes: the next leaves after the previous reply or timeout"""
    result = EchoResult(target=target, payload_size=payload_size, requested=n)
    if n == 0:
        return result
    timeout_us = timeout_us or world.echo_timeout_us

    def on_reply(rtt: Optional[int]) -> None:
        if rtt is None:
            result.timeouts += 1
        else:
            result.samples.append(rtt)
        if not result.done:
            orchestrator.send_probe(target, payload_size, on_reply, timeout_us)

    world.sim.schedule(world.now_us, "echo_benchmark_start",
                       lambda: orchestrator.send_probe(target, payload_size, on_reply, timeout_us),
                       target=target, payload_size=payload_size, n=n)
    world.sim.run(stop_when=lambda: result.done)
    logger.info("echo benchmark %s %dB: %d samples, %d timeouts",
                target, payload_size, len(result.samples), result.timeouts)
    return result


def run_burst_benchmark(orchestrator: OrchestratorAgent, target: str, world, payload_size: int = 128,
                        n: int = 100, spacing_us: int = 1_000, timeout_us: Optional[int] = None) -> BurstResult:
    """Probes leave on a fixed schedule without waiting for replies"""
    result = BurstResult(target=target, payload_size=payload_size, requested=n, spacing_us=spacing_us)
    if n == 0:
        return result
    timeout_us = timeout_us or world.echo_timeout_us
    by_index: Dict[int, int] = {}

    def recorder(index: int) -> Callable[[Optional[int]], None]:
        def on_reply(rtt: Optional[int]) -> None:
            if rtt is None:
                result.timeouts += 1
            else:
                by_index[index] = rtt
                result.samples = [by_index[i] for i in sorted(by_index)]
        return on_reply

    start = world.now_us
    for index in range(n):
        world.sim.schedule(start + index * spacing_us, "burst_probe",
                           lambda i=index: orchestrator.send_probe(target, payload_size, recorder(i), timeout_us),
                           index=index)
    world.sim.run(stop_when=lambda: result.done)
    return result
