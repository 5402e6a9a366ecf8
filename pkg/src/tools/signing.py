"""Per-agent HMAC signing with nonce and counter replay protection."""
import hashlib
import hmac
import logging
import secrets
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Deque, Dict, Iterable, Iterator, Optional, Set

from config import Config
from models.envelope import (
    AuthBlock, Envelope, RejectReason, UnsignableEnvelope, VerificationResult,
    require_agent_id,
)
from tools.envelope_codec import encode_envelope

logger = logging.getLogger(__name__)

NonceSource = Callable[[], bytes]


@dataclass(frozen=True)
class SigningKey:
    key_id: str
    sender: str
    secret: bytes


class Keystore:
    """key_id -> SigningKey map shared by the broker and verifying agents"""

    def __init__(self, keys: Iterable[SigningKey] = ()):
        self._keys: Dict[str, SigningKey] = {}
        for key in keys:
            self.add(key)

    def add(self, key: SigningKey) -> None:
        if key.key_id in self._keys:
            raise ValueError(f"duplicate key id {key.key_id!r}")
        require_agent_id(key.sender)
        self._keys[key.key_id] = key

    def get(self, key_id: str) -> Optional[SigningKey]:
        return self._keys.get(key_id)

    def key_for_sender(self, sender: str) -> Optional[SigningKey]:
        for key in self._keys.values():
            if key.sender == sender:
                return key
        return None

    def __iter__(self) -> Iterator[SigningKey]:
        return iter(self._keys.values())

    def __len__(self) -> int:
        return len(self._keys)

    def __contains__(self, key_id: str) -> bool:
        return key_id in self._keys


def parse_keystore_lines(lines: Iterable[str]) -> Keystore:
    """Parse `key_id sender hexkey` lines; blank lines and # comments are skipped"""
    store = Keystore()
    for lineno, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        parts = text.split()
        if len(parts) != 3:
            raise ValueError(f"keystore line {lineno}: expected 'key_id sender hexkey'")
        key_id, sender, hexkey = parts
        try:
            secret = bytes.fromhex(hexkey)
        except ValueError as exc:
            raise ValueError(f"keystore line {lineno}: key is not hex") from exc
        store.add(SigningKey(key_id=key_id, sender=sender, secret=secret))
    return store


def load_keystore(path: str) -> Keystore:
    return parse_keystore_lines(Path(path).read_text(encoding="utf-8").splitlines())


def derive_simulation_key(seed: int, sender: str) -> SigningKey:
    """Deterministic per-agent key for scenarios that do not ship a keystore"""
    secret = hashlib.sha256(f"{seed}:{sender}".encode("utf-8")).digest()
    return SigningKey(key_id=f"{sender}-k1", sender=sender, secret=secret)


@dataclass
class CounterState:
    """Per-sender monotonic signing counters"""
    last: Dict[str, int] = field(default_factory=dict)

    def advance(self, sender: str) -> int:
        value = self.last.get(sender, 0) + 1
        self.last[sender] = value
        return value


@dataclass
class SenderWindow:
    nonces: Deque[str] = field(default_factory=deque)
    nonce_set: Set[str] = field(default_factory=set)
    highest_counter: int = 0


@dataclass
class ReplayState:
    """Bounded per-sender nonce window plus highest counter seen"""
    window: int = Config.REPLAY_WINDOW
    senders: Dict[str, SenderWindow] = field(default_factory=dict)

    def seen_nonce(self, sender: str, nonce: str) -> bool:
        entry = self.senders.get(sender)
        return entry is not None and nonce in entry.nonce_set

    def highest(self, sender: str) -> int:
        entry = self.senders.get(sender)
        return entry.highest_counter if entry else 0

    def remember(self, sender: str, nonce: str, counter: int) -> None:
        entry = self.senders.setdefault(sender, SenderWindow())
        entry.nonces.append(nonce)
        entry.nonce_set.add(nonce)
        while len(entry.nonces) > self.window:
            entry.nonce_set.discard(entry.nonces.popleft())
        entry.highest_counter = max(entry.highest_counter, counter)


def _mac_input(env: Envelope, key_id: str, nonce: str, counter: int) -> bytes:
    return b"\x00".join([
        encode_envelope(env),
        key_id.encode("utf-8"),
        nonce.encode("ascii"),
        str(counter).encode("ascii"),
    ])


def compute_mac(secret: bytes, env: Envelope, key_id: str, nonce: str, counter: int) -> str:
    return hmac.new(secret, _mac_input(env, key_id, nonce, counter), hashlib.sha256).hexdigest()


def sign_envelope(env: Envelope, key: SigningKey, counter_state: CounterState,
                  nonce_source: Optional[NonceSource] = None) -> AuthBlock:
    """Produce an auth block for env, advancing the sender's counter by one"""
    if env.sender is None:
        raise UnsignableEnvelope("cannot sign an envelope without a sender")
    if key.sender != env.sender:
        raise UnsignableEnvelope(f"key {key.key_id!r} is not registered for sender {env.sender!r}")
    raw_nonce = (nonce_source or (lambda: secrets.token_bytes(Config.NONCE_BYTES)))()
    if len(raw_nonce) != Config.NONCE_BYTES:
        raise ValueError("nonce source must yield 16 bytes")
    nonce = raw_nonce.hex()
    counter = counter_state.advance(env.sender)
    signature = compute_mac(key.secret, env, key.key_id, nonce, counter)
    return AuthBlock(key_id=key.key_id, nonce=nonce, counter=counter, signature=signature)


def verify_envelope(env: Envelope, auth: Optional[AuthBlock], keystore: Keystore,
                    replay_state: ReplayState) -> VerificationResult:
    """Verify an envelope; replay_state is only updated on success"""
    if auth is None:
        return VerificationResult.rejected(RejectReason.MISSING_AUTH)
    key = keystore.get(auth.key_id)
    if key is None:
        return VerificationResult.rejected(RejectReason.UNKNOWN_KEY)
    # the MAC covers the encoded sender, so a rewritten sender fails here
    expected = compute_mac(key.secret, env, auth.key_id, auth.nonce, auth.counter)
    if not hmac.compare_digest(expected, auth.signature):
        return VerificationResult.rejected(RejectReason.BAD_SIGNATURE)
    if key.sender != env.sender:
        # a valid MAC from a key registered to someone else
        return VerificationResult.rejected(RejectReason.UNKNOWN_KEY)
    if replay_state.seen_nonce(env.sender, auth.nonce):
        return VerificationResult.rejected(RejectReason.REPLAYED_NONCE)
    if auth.counter <= replay_state.highest(env.sender):
        return VerificationResult.rejected(RejectReason.STALE_COUNTER)
    replay_state.remember(env.sender, auth.nonce, auth.counter)
    logger.debug("verified %s counter=%d key=%s", env.sender, auth.counter, auth.key_id)
    return VerificationResult.ok()


def seeded_nonce_source(rng) -> NonceSource:
    """Nonce generator drawing from a seeded random.Random"""
    return lambda: rng.randbytes(Config.NONCE_BYTES)
