"""Canonical wire format for coordination envelopes.

Layout: a JSON object with lexicographically sorted keys, no insignificant
whitespace, UTF-8, integers as decimal text, payload as standard base64.
Fields: auth (optional object), correlation_id (optional, 32 hex chars),
msg_type, payload, sender (optional), timestamp_us.
"""
import base64
import binascii
import json
import re
from enum import Enum
from typing import Any, Dict, Optional, Tuple

from config import Config
from models.envelope import (
    AuthBlock, Envelope, MalformedEnvelope, MissingField, MsgType,
    PayloadTooLarge, is_valid_agent_id, is_valid_correlation_id,
)

_NONCE_HEX = re.compile(r"^[0-9a-f]{%d}$" % (2 * Config.NONCE_BYTES))
_MAC_HEX = re.compile(r"^[0-9a-f]{%d}$" % (2 * Config.MAC_BYTES))
_ENVELOPE_FIELDS = {"auth", "correlation_id", "msg_type", "payload", "sender", "timestamp_us"}
_AUTH_FIELDS = {"counter", "key_id", "nonce", "signature"}


class DecodeMode(Enum):
    LENIENT = "lenient"
    STRICT = "strict"


def canonical_json(document: Any) -> bytes:
    return json.dumps(
        document, sort_keys=True, separators=(",", ":"), ensure_ascii=False
    ).encode("utf-8")


def _envelope_document(env: Envelope) -> Dict[str, Any]:
    doc: Dict[str, Any] = {
        "msg_type": env.msg_type.value,
        "payload": base64.b64encode(env.payload).decode("ascii"),
        "timestamp_us": env.timestamp_us,
    }
    if env.sender is not None:
        doc["sender"] = env.sender
    if env.correlation_id is not None:
        doc["correlation_id"] = env.correlation_id
    return doc


def encode_envelope(env: Envelope, auth: Optional[AuthBlock] = None,
                    max_payload: int = Config.MAX_PAYLOAD_BYTES) -> bytes:
    """Encode an envelope (and optional auth block) to canonical bytes"""
    if len(env.payload) > max_payload:
        raise PayloadTooLarge(len(env.payload), max_payload)
    doc = _envelope_document(env)
    if auth is not None:
        doc["auth"] = {
            "counter": auth.counter,
            "key_id": auth.key_id,
            "nonce": auth.nonce,
            "signature": auth.signature,
        }
    return canonical_json(doc)


def _require_int(value: Any, name: str) -> int:
    # bool is an int subclass; reject it explicitly
    if not isinstance(value, int) or isinstance(value, bool):
        raise MalformedEnvelope(f"{name} must be an integer")
    return value


def _decode_auth(raw: Any) -> AuthBlock:
    if not isinstance(raw, dict) or set(raw) != _AUTH_FIELDS:
        raise MalformedEnvelope("auth block must carry exactly counter, key_id, nonce, signature")
    if not isinstance(raw["key_id"], str) or not raw["key_id"]:
        raise MalformedEnvelope("auth.key_id must be a non-empty string")
    if not isinstance(raw["nonce"], str) or not _NONCE_HEX.match(raw["nonce"]):
        raise MalformedEnvelope("auth.nonce must be 32 lowercase hex chars")
    if not isinstance(raw["signature"], str) or not _MAC_HEX.match(raw["signature"]):
        raise MalformedEnvelope("auth.signature must be 64 lowercase hex chars")
    counter = _require_int(raw["counter"], "auth.counter")
    if counter < 1:
        raise MalformedEnvelope("auth.counter must be >= 1")
    return AuthBlock(key_id=raw["key_id"], nonce=raw["nonce"],
                     counter=counter, signature=raw["signature"])


def decode_envelope(data: bytes, mode: DecodeMode = DecodeMode.STRICT,
                    max_payload: int = Config.MAX_PAYLOAD_BYTES) -> Tuple[Envelope, Optional[AuthBlock]]:
    """Decode wire bytes.

    Lenient mode tolerates a missing sender or correlation_id, the way the
    unauthenticated broker does; strict mode requires every field.
    """
    try:
        doc = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedEnvelope(f"not a JSON document: {exc}") from exc
    if not isinstance(doc, dict):
        raise MalformedEnvelope("envelope must be a JSON object")
    unknown = set(doc) - _ENVELOPE_FIELDS
    if unknown:
        raise MalformedEnvelope(f"unknown fields: {sorted(unknown)}")

    for required in ("msg_type", "timestamp_us", "payload"):
        if required not in doc:
            raise MissingField(required)
    if mode is DecodeMode.STRICT:
        for required in ("sender", "correlation_id"):
            if required not in doc:
                raise MissingField(required)

    try:
        msg_type = MsgType(doc["msg_type"])
    except ValueError as exc:
        raise MalformedEnvelope(f"unknown msg_type {doc['msg_type']!r}") from exc

    timestamp_us = _require_int(doc["timestamp_us"], "timestamp_us")
    if timestamp_us < 0:
        raise MalformedEnvelope("timestamp_us must be >= 0")

    if not isinstance(doc["payload"], str):
        raise MalformedEnvelope("payload must be base64 text")
    try:
        payload = base64.b64decode(doc["payload"], validate=True)
    except (binascii.Error, ValueError) as exc:
        raise MalformedEnvelope("payload is not valid base64") from exc
    if base64.b64encode(payload).decode("ascii") != doc["payload"]:
        raise MalformedEnvelope("payload base64 is not in canonical form")
    if len(payload) > max_payload:
        raise PayloadTooLarge(len(payload), max_payload)

    sender = doc.get("sender")
    if sender is not None and not is_valid_agent_id(sender):
        raise MalformedEnvelope(f"invalid sender id: {sender!r}")

    correlation_id = doc.get("correlation_id")
    if correlation_id is not None and not is_valid_correlation_id(correlation_id):
        raise MalformedEnvelope("correlation_id must be 32 lowercase hex chars")

    auth = _decode_auth(doc["auth"]) if "auth" in doc else None
    env = Envelope(msg_type=msg_type, timestamp_us=timestamp_us, payload=payload,
                   sender=sender, correlation_id=correlation_id)
    return env, auth


def payload_json(env: Envelope) -> Dict[str, Any]:
    """Best-effort JSON view of an envelope payload; {} when it is not a JSON object"""
    try:
        value = json.loads(env.payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        return {}
    return value if isinstance(value, dict) else {}
