import logging
from typing import Dict, List, Optional

from agents.base_agent import SwarmAgent
from config import Config
from models.agent_models import (
    ACTION_RESULT_STATE, ActionType, ActuationLogEntry, AgentSpec, AuditRecord, Device, Reaction,
)
from models.envelope import Envelope, EnvelopeError, MsgType
from tools.envelope_codec import DecodeMode, decode_envelope, payload_json
from tools.topics import sensor_topic

logger = logging.getLogger(__name__)


class BridgeAgent(SwarmAgent):
    """IoT bridge: owns the devices, actuates on command and audits every actuation at start"""

    def __init__(self, spec: AgentSpec, world, devices: Dict[str, Device]):
        super().__init__(spec, world)
        self.devices = devices
        self.deferred: List[dict] = []
        self.errors: List[dict] = []

    def subscriptions(self) -> List[str]:
        return super().subscriptions() + [f"{Config.ACTUATE_PREFIX}/+"]

    def on_message(self, topic: str, data: bytes) -> None:
        if not topic.startswith(Config.ACTUATE_PREFIX + "/"):
            super().on_message(topic, data)
            return
        # Direct device topic: no inbox, no trust check
        try:
            env, _ = decode_envelope(data, DecodeMode.LENIENT)
        except EnvelopeError:
            self.malformed += 1
            return
        device_id = topic.rsplit("/", 1)[1]
        self.reactions.extend(self.execute(env, topic, default_device=device_id))

    def execute(self, env: Envelope, topic: str, default_device: Optional[str] = None) -> List[Reaction]:
        body = payload_json(env)
        device_id = body.get("device", default_device)
        device = self.devices.get(device_id) if isinstance(device_id, str) else None
        try:
            action = ActionType(body.get("action"))
        except ValueError:
            action = None
        if device is None or action is None:
            return [self._report_error(env, device_id, "unknown_device" if device is None else "unknown_action")]

        if self.spec.defer_when_unstable:
            stable_at = self.world.network.stable_at(self.spec.link, self.world.now_us,
                                                     self.spec.stability_window_us)
            if stable_at > self.world.now_us:
                wait = stable_at - self.world.now_us
                self.deferred.append({"correlation_id": env.correlation_id, "device": device.id,
                                      "deferred_us": wait})
                logger.info("%s deferring %s on %s by %dus (link unstable)", self.id, action.value, device.id, wait)
                self.world.sim.schedule(stable_at, "deferred_actuation",
                                        lambda: self.reactions.append(self.begin_actuation(env, topic, device, action, wait)),
                                        device=device.id)
                return [Reaction("deferred", {"device": device.id, "deferred_us": wait})]
        return [self.begin_actuation(env, topic, device, action)]

    def begin_actuation(self, env: Envelope, topic: str, device: Device, action: ActionType,
                        deferred_us: int = 0) -> Reaction:
        now = self.world.now_us
        completes = now + device.actuation_duration_us
        device.busy_until_us = completes
        new_state = ACTION_RESULT_STATE[action]
        self.world.sim.schedule(completes, "actuation_complete", lambda: device.complete(new_state),
                                device=device.id, state=new_state)
        self.world.actuation_log.append(ActuationLogEntry(
            correlation_id=env.correlation_id,
            device_id=device.id,
            device_kind=device.kind,
            actuation_duration_us=device.actuation_duration_us,
            started_us=now,
            completes_us=completes,
            via_topic=topic,
            issued_by=env.sender,
            deferred_us=deferred_us,
        ))
        record = AuditRecord(
            actor=self.id,
            issued_by=env.sender,
            correlation_id=env.correlation_id,
            device_id=device.id,
            action=action.value,
            executed_at_us=now,
            completes_at_us=completes,
        )
        self.publish(Config.AUDIT_TOPIC, MsgType.AUDIT, record.to_payload(), durable=True)
        logger.debug("%s %s %s (cid=%s)", self.id, action.value, device.id, env.correlation_id)
        return Reaction("actuated", {"device": device.id, "action": action.value,
                                     "correlation_id": env.correlation_id})

    def _report_error(self, env: Envelope, device_id, error: str) -> Reaction:
        details = {"kind": "error", "error": error, "device": device_id,
                   "command_correlation_id": env.correlation_id}
        self.errors.append(details)
        logger.warning("%s rejected command %s: %s", self.id, env.correlation_id, error)
        self.publish(Config.AUDIT_TOPIC, MsgType.STATUS, details)
        return Reaction("error", details)

    def sensor_read(self, device_id: str) -> None:
        device = self.devices[device_id]
        self.world.count_operation()
        self.publish(sensor_topic(device_id), MsgType.STATUS,
                     {"device": device_id, "kind": device.kind.value, "state": device.state})
