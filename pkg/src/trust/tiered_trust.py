"""Channel-level trust collapse (baseline) and per-message tiered trust (hardened)."""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional

from config import Config
from models.envelope import Envelope, RejectReason, VerificationResult
from tools.envelope_codec import payload_json

logger = logging.getLogger(__name__)


class TrustMode(Enum):
    BASELINE = "baseline"
    HARDENED = "hardened"


class TrustDecision(Enum):
    ACCEPT = "accept"
    QUARANTINE = "quarantine"
    REFUSE = "refuse"
    REQUIRE_OOB = "require_oob"


SCORE_STEP = 0.1
FORGERY_PENALTY = 0.5


@dataclass(frozen=True)
class QuarantinedEnvelope:
    received_us: int
    envelope: Envelope
    reason: str


@dataclass
class TrustState:
    """One defender's view of the channel"""
    mode: TrustMode = TrustMode.BASELINE
    threshold: int = Config.DISTRUST_THRESHOLD
    scores: Dict[str, float] = field(default_factory=dict)
    channel_distrust: bool = False
    forgery_count: int = 0
    forgeries_total: int = 0
    quarantine: List[QuarantinedEnvelope] = field(default_factory=list)
    pending_oob: List[Envelope] = field(default_factory=list)
    instance_tags: Dict[str, str] = field(default_factory=dict)
    distrust_since_us: Optional[int] = None
    first_refusal_us: Optional[int] = None
    oob_reset_us: Optional[int] = None
    refused: List[Envelope] = field(default_factory=list)
    decisions: List[dict] = field(default_factory=list)

    def observe_heartbeat(self, env: Envelope) -> None:
        """Remember the instance tag each sender advertises on the broadcast topic"""
        if env.sender is None:
            return
        tag = payload_json(env).get("instance")
        if isinstance(tag, str):
            self.instance_tags[env.sender] = tag

    def contradicts_heartbeats(self, env: Envelope) -> bool:
        """A command is contradicted when it claims an instance its sender's heartbeat stream disagrees with"""
        if env.sender is None or env.sender not in self.instance_tags:
            return False
        claimed = payload_json(env).get("instance")
        return claimed is not None and claimed != self.instance_tags[env.sender]

    def score(self, sender: Optional[str]) -> float:
        return self.scores.get(sender or "", 0.5)

    def _adjust(self, sender: Optional[str], delta: float) -> None:
        key = sender or ""
        self.scores[key] = min(1.0, max(0.0, self.score(sender) + delta))


def assess(state: TrustState, env: Envelope, verification: Optional[VerificationResult],
           now_us: int) -> TrustDecision:
    """Decide what the defender does with one inbox command"""
    if state.mode is TrustMode.BASELINE:
        decision = _assess_baseline(state, env, now_us)
    else:
        decision = _assess_hardened(state, env, verification, now_us)
    if decision is TrustDecision.REFUSE:
        state.refused.append(env)
        if state.first_refusal_us is None:
            state.first_refusal_us = now_us
    state.decisions.append({"time_us": now_us, "sender": env.sender,
                            "correlation_id": env.correlation_id, "decision": decision.value})
    return decision


def _assess_baseline(state: TrustState, env: Envelope, now_us: int) -> TrustDecision:
    if state.channel_distrust:
        return TrustDecision.REFUSE
    if state.contradicts_heartbeats(env):
        state.forgery_count += 1
        state.forgeries_total += 1
        state._adjust(env.sender, -FORGERY_PENALTY)
        if state.forgery_count >= state.threshold:
            state.channel_distrust = True
            state.distrust_since_us = now_us
            logger.warning("channel distrusted after %d forged messages", state.forgery_count)
        return TrustDecision.REFUSE
    state._adjust(env.sender, SCORE_STEP)
    return TrustDecision.ACCEPT


def _assess_hardened(state: TrustState, env: Envelope, verification: Optional[VerificationResult],
                     now_us: int) -> TrustDecision:
    if verification is not None and verification.verified:
        state._adjust(env.sender, SCORE_STEP)
        return TrustDecision.ACCEPT
    reason = verification.reason if verification is not None else RejectReason.MISSING_AUTH
    unverifiable = reason in (RejectReason.MISSING_AUTH, RejectReason.UNKNOWN_KEY)
    if unverifiable and not state.contradicts_heartbeats(env):
        state.pending_oob.append(env)
        return TrustDecision.REQUIRE_OOB
    state._adjust(env.sender, -FORGERY_PENALTY)
    state.quarantine.append(QuarantinedEnvelope(received_us=now_us, envelope=env, reason=reason.value))
    logger.info("quarantined envelope from %s: %s", env.sender, reason.value)
    return TrustDecision.QUARANTINE


@dataclass
class OobChannel:
    """Operator channel for channel resets and per-message confirmations; anything arriving here is authentic"""
    response_delay_us: int = Config.OOB_RESPONSE_DELAY_US
    resets: List[int] = field(default_factory=list)
    confirmations: List[int] = field(default_factory=list)

    def reset(self, state: TrustState, now_us: int) -> None:
        state.channel_distrust = False
        state.forgery_count = 0
        state.oob_reset_us = now_us
        self.resets.append(now_us)
        logger.info("channel trust restored out-of-band at %dus", now_us)

    def confirm(self, state: TrustState, env: Envelope, now_us: int) -> bool:
        """Resolve a pending confirmation; True when env was waiting"""
        if env in state.pending_oob:
            state.pending_oob.remove(env)
            self.confirmations.append(now_us)
            return True
        return False


@dataclass(frozen=True)
class LockoutReport:
    lockout_us: int
    refused_legitimate: int
    forgeries_detected: int
    distrusted: bool
    oob_resets: int
    oob_confirmations: int

    def to_dict(self) -> dict:
        return {
            "lockout_us": self.lockout_us,
            "refused_legitimate": self.refused_legitimate,
            "forgeries_detected": self.forgeries_detected,
            "distrusted": self.distrusted,
            "oob_resets": self.oob_resets,
            "oob_confirmations": self.oob_confirmations,
        }


def lockout_report(state: TrustState, timeline_end_us: int, oob: Optional[OobChannel] = None) -> LockoutReport:
    """Lockout runs from the first refusal to the OOB reset (or end of run); zero unless the channel was distrusted"""
    lockout = 0
    if state.distrust_since_us is not None and state.first_refusal_us is not None:
        end = state.oob_reset_us if state.oob_reset_us is not None else timeline_end_us
        lockout = max(0, end - state.first_refusal_us)
    legitimate_refused = sum(1 for env in state.refused if not state.contradicts_heartbeats(env))
    return LockoutReport(
        lockout_us=lockout,
        refused_legitimate=legitimate_refused,
        forgeries_detected=state.forgeries_total,
        distrusted=state.distrust_since_us is not None,
        oob_resets=len(oob.resets) if oob else 0,
        oob_confirmations=len(oob.confirmations) if oob else 0,
    )
