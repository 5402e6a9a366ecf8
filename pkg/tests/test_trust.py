import json

import pytest

from models.envelope import Envelope, MsgType, RejectReason, VerificationResult
from trust.tiered_trust import (
    OobChannel, TrustDecision, TrustMode, TrustState, assess, lockout_report,
)


def heartbeat(sender="orion", instance="aaaa0001"):
    return Envelope(MsgType.HEARTBEAT, 0, json.dumps({"instance": instance, "seq": 1}).encode(), sender=sender)


def command(instance="aaaa0001", n=0, sender="orion"):
    body = {"action": "lock", "device": "front-door", "instance": instance}
    return Envelope(MsgType.COMMAND, 1_000 + n, json.dumps(body).encode(), sender=sender,
                    correlation_id=f"{n:032x}")


@pytest.fixture
def baseline():
    state = TrustState(mode=TrustMode.BASELINE, threshold=5)
    state.observe_heartbeat(heartbeat())
    return state


def test_baseline_accepts_consistent_commands(baseline):
    assert assess(baseline, command(), None, 10) is TrustDecision.ACCEPT
    assert baseline.score("orion") > 0.5


def test_baseline_unknown_sender_is_not_contradicted(baseline):
    assert assess(baseline, command(sender="hub", instance="zz"), None, 10) is TrustDecision.ACCEPT


def test_forgeries_below_threshold_keep_the_channel():
    state = TrustState(threshold=5)
    state.observe_heartbeat(heartbeat())
    for n in range(4):
        assert assess(state, command("ffff0000", n), None, n) is TrustDecision.REFUSE
    assert not state.channel_distrust
    assert assess(state, command(n=99), None, 100) is TrustDecision.ACCEPT


def test_threshold_collapses_trust_in_the_whole_channel(baseline):
    for n in range(5):
        assess(baseline, command("ffff0000", n), None, 100 + n)
    assert baseline.channel_distrust
    assert baseline.distrust_since_us == 104
    assert assess(baseline, command(n=50), None, 200) is TrustDecision.REFUSE


def test_oob_reset_restores_the_channel(baseline):
    for n in range(5):
        assess(baseline, command("ffff0000", n), None, 100 + n)
    oob = OobChannel(response_delay_us=1_000)
    assess(baseline, command(n=50), None, 200)
    oob.reset(baseline, 1_200)
    assert not baseline.channel_distrust
    assert assess(baseline, command(n=51), None, 1_300) is TrustDecision.ACCEPT
    report = lockout_report(baseline, 5_000, oob)
    assert report.distrusted
    assert report.forgeries_detected == 5
    assert report.refused_legitimate == 1
    assert report.oob_resets == 1
    assert report.oob_confirmations == 0
    # first refusal is the first forgery
    assert report.lockout_us == 1_200 - 100


def test_lockout_runs_to_end_without_reset(baseline):
    for n in range(5):
        assess(baseline, command("ffff0000", n), None, 100 + n)
    assert lockout_report(baseline, 10_000).lockout_us == 10_000 - 100


def test_no_lockout_without_distrust(baseline):
    assess(baseline, command("ffff0000"), None, 5)
    report = lockout_report(baseline, 10_000)
    assert report.lockout_us == 0
    assert not report.distrusted


@pytest.fixture
def hardened():
    state = TrustState(mode=TrustMode.HARDENED)
    state.observe_heartbeat(heartbeat())
    return state


def test_hardened_accepts_verified(hardened):
    assert assess(hardened, command(), VerificationResult.ok(), 1) is TrustDecision.ACCEPT


@pytest.mark.parametrize("reason", [RejectReason.BAD_SIGNATURE, RejectReason.REPLAYED_NONCE,
                                    RejectReason.STALE_COUNTER])
def test_hardened_quarantines_only_the_bad_message(hardened, reason):
    assert assess(hardened, command(), VerificationResult.rejected(reason), 1) is TrustDecision.QUARANTINE
    assert hardened.quarantine[0].reason == reason.value
    assert assess(hardened, command(n=1), VerificationResult.ok(), 2) is TrustDecision.ACCEPT
    assert not hardened.channel_distrust


def test_hardened_unsigned_but_consistent_needs_oob(hardened):
    env = command()
    decision = assess(hardened, env, VerificationResult.rejected(RejectReason.MISSING_AUTH), 1)
    assert decision is TrustDecision.REQUIRE_OOB
    oob = OobChannel()
    assert oob.confirm(hardened, env, 60_000_001)
    assert not oob.confirm(hardened, env, 60_000_002)
    report = lockout_report(hardened, 70_000_000, oob)
    assert report.oob_confirmations == 1
    assert report.oob_resets == 0


def test_hardened_unsigned_and_contradicted_is_quarantined(hardened):
    decision = assess(hardened, command("ffff0000"), VerificationResult.rejected(RejectReason.MISSING_AUTH), 1)
    assert decision is TrustDecision.QUARANTINE


def test_hardened_flood_never_distrusts_the_channel(hardened):
    for n in range(20):
        assess(hardened, command("ffff0000", n), VerificationResult.rejected(RejectReason.BAD_SIGNATURE), n)
    assert len(hardened.quarantine) == 20
    assert lockout_report(hardened, 1_000).lockout_us == 0


def test_decisions_are_logged(baseline):
    assess(baseline, command(), None, 7)
    assert baseline.decisions == [{"time_us": 7, "sender": "orion", "correlation_id": f"{0:032x}",
                                   "decision": "accept"}]
