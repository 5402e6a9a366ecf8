"""In-process pub/sub broker with a supervision mirror and a posture-dependent policy layer."""
import base64
import logging
from typing import Callable, Dict, List, Optional

from models.broker_models import (
    BrokerPolicy, BrokerVerdict, ClientSession, Delivery, DeliveryRecord, SessionState,
)
from models.envelope import EnvelopeError, MissingField
from tools.envelope_codec import DecodeMode, canonical_json, decode_envelope
from tools.signing import verify_envelope
from tools.topics import AclAction, acl_allows, is_valid_filter, is_valid_topic, topic_matches

logger = logging.getLogger(__name__)


class SessionError(RuntimeError):
    pass


def mirror_wrapper(topic: str, data: bytes, broker_ts_us: int) -> bytes:
    return canonical_json({
        "broker_ts_us": broker_ts_us,
        "message": base64.b64encode(data).decode("ascii"),
        "topic": topic,
    })


class Broker:
    """At-most-once broker: messages for parked sessions are lost, rejections are silent"""

    def __init__(self, policy: BrokerPolicy, reconnect_sampler: Callable[[], int]):
        self.policy = policy
        self.reconnect_sampler = reconnect_sampler
        self.sessions: Dict[str, ClientSession] = {}
        self.event_log: List[DeliveryRecord] = []
        self.denied_subscriptions: List[dict] = []
        self._next_sub_id = 1

    # --- Sessions ---

    def connect(self, session_id: str, principal: str, link: Optional[str] = None) -> ClientSession:
        if session_id in self.sessions:
            raise SessionError(f"session {session_id!r} already exists")
        session = ClientSession(session_id=session_id, principal=principal, link=link)
        self.sessions[session_id] = session
        logger.debug("session %s connected as %s", session_id, principal)
        return session

    def _session(self, session_id: str) -> ClientSession:
        try:
            return self.sessions[session_id]
        except KeyError:
            raise SessionError(f"unknown session {session_id!r}") from None

    def disconnect(self, session_id: str) -> None:
        session = self._session(session_id)
        session.state = SessionState.PARKED
        logger.info("session %s parked with %d subscriptions", session_id, len(session.subscriptions))

    def reconnect(self, session_id: str) -> int:
        """Begin reconnecting; returns the sampled client reconnect delay in us"""
        if session_id not in self.sessions:
            raise SessionError(f"cannot reconnect never-connected session {session_id!r}")
        session = self.sessions[session_id]
        session.state = SessionState.RECONNECTING
        return self.reconnect_sampler()

    def restore(self, session_id: str) -> None:
        self._session(session_id).state = SessionState.CONNECTED
        logger.info("session %s restored", session_id)

    # --- Subscriptions ---

    def subscribe(self, session_id: str, topic_filter: str) -> Optional[int]:
        """Returns the subscription id, or None when the policy denies it"""
        session = self._session(session_id)
        if not is_valid_filter(topic_filter):
            raise ValueError(f"invalid topic filter {topic_filter!r}")
        if topic_filter in session.subscriptions:
            return session.subscriptions[topic_filter]
        if self.policy.hardened and not acl_allows(self.policy.acl, session.principal,
                                                   AclAction.SUBSCRIBE, topic_filter):
            logger.warning("subscription denied: %s -> %s", session.principal, topic_filter)
            self.denied_subscriptions.append({"session": session_id, "filter": topic_filter})
            return None
        sub_id = self._next_sub_id
        self._next_sub_id += 1
        session.subscriptions[topic_filter] = sub_id
        return sub_id

    # --- Publishing ---

    def _policy_check(self, session: ClientSession, topic: str, data: bytes) -> Optional[str]:
        """Rejection reason under the hardened policy, None when acceptable"""
        if not acl_allows(self.policy.acl, session.principal, AclAction.PUBLISH, topic):
            return "acl_denied"
        try:
            env, auth = decode_envelope(data, DecodeMode.STRICT)
        except MissingField as exc:
            return f"missing_field({exc.field_name})"
        except EnvelopeError:
            return "malformed"
        result = verify_envelope(env, auth, self.policy.keystore, self.policy.replay_state)
        return None if result.verified else result.reason.value

    def _first_match(self, session: ClientSession, topic: str) -> Optional[int]:
        for topic_filter, sub_id in session.subscriptions.items():
            if topic_matches(topic_filter, topic):
                return sub_id
        return None

    def publish(self, session_id: str, topic: str, data: bytes, now_us: int) -> DeliveryRecord:
        session = self._session(session_id)
        if not session.connected:
            raise SessionError(f"session {session_id!r} is not connected")
        if not is_valid_topic(topic):
            raise ValueError(f"invalid topic {topic!r}")

        reason = self._policy_check(session, topic, data) if self.policy.hardened else None
        if reason is not None:
            record = DeliveryRecord(topic=topic, session_id=session_id,
                                    verdict=BrokerVerdict.REJECTED, broker_ts_us=now_us, reason=reason)
            logger.warning("rejected publish from %s on %s: %s", session.principal, topic, reason)
            self.event_log.append(record)
            return record

        record = DeliveryRecord(topic=topic, session_id=session_id,
                                verdict=BrokerVerdict.ACCEPTED, broker_ts_us=now_us)
        wrapped = mirror_wrapper(topic, data, now_us)
        for target in self.sessions.values():
            direct = self._first_match(target, topic)
            mirror = self._first_match(target, self.policy.mirror_topic)
            for sub_id, payload, mirrored, delivered_topic in (
                (direct, data, False, topic),
                (mirror, wrapped, True, self.policy.mirror_topic),
            ):
                if sub_id is None:
                    continue
                if not target.connected:
                    record.missed.append(target.session_id)
                    continue
                record.deliveries.append(Delivery(session_id=target.session_id, subscription_id=sub_id,
                                                  topic=delivered_topic, data=payload, mirrored=mirrored))
        logger.debug("accepted publish on %s: %d deliveries", topic, len(record.deliveries))
        self.event_log.append(record)
        return record

    def export_log(self, path: str) -> None:
        with open(path, "wb") as fh:
            for record in self.event_log:
                fh.write(canonical_json(record.to_log()) + b"\n")
