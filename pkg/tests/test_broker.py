import base64
import json
import random

import pytest

from broker.broker import Broker, SessionError
from models.broker_models import BrokerPolicy, MirrorEntry, Posture, SessionState
from models.envelope import Envelope, MsgType
from tools.envelope_codec import encode_envelope
from tools.signing import (
    CounterState, Keystore, derive_simulation_key, seeded_nonce_source, sign_envelope,
)
from tools.topics import least_privilege_acl

CID = "0123456789abcdef0123456789abcdef"
ROSTER = [("orion", "orchestrator"), ("hub", "bridge")]
EXTRA = [("operator", "operator"), ("supervisor", "supervisor")]


def command(sender="orion") -> Envelope:
    return Envelope(MsgType.COMMAND, 1_000, b'{"action":"lock","device":"front-door"}',
                    sender=sender, correlation_id=CID)


@pytest.fixture
def keystore():
    return Keystore([derive_simulation_key(3, agent) for agent, _ in ROSTER])


def make_broker(policy: BrokerPolicy) -> Broker:
    broker = Broker(policy, lambda: 9_300)
    for session in ("orion", "hub", "supervisor", "rogue"):
        broker.connect(session, session)
    broker.subscribe("hub", "agents/inbox/hub")
    broker.subscribe("hub", "iot/actuate/+")
    broker.subscribe("supervisor", "agents/mirror")
    return broker


@pytest.fixture
def baseline():
    return make_broker(BrokerPolicy())


@pytest.fixture
def hardened(keystore):
    return make_broker(BrokerPolicy(mode=Posture.HARDENED, acl=least_privilege_acl(ROSTER, EXTRA),
                                    keystore=keystore))


def signed(keystore, env):
    auth = sign_envelope(env, keystore.key_for_sender(env.sender), CounterState(),
                         seeded_nonce_source(random.Random(9)))
    return encode_envelope(env, auth)


def test_baseline_accepts_anything_and_mirrors_it(baseline):
    data = encode_envelope(Envelope(MsgType.COMMAND, 5, b"{}", correlation_id=CID))
    record = baseline.publish("rogue", "agents/inbox/hub", data, 5)
    assert record.accepted
    direct = [d for d in record.deliveries if not d.mirrored]
    mirrored = [d for d in record.deliveries if d.mirrored]
    assert [d.session_id for d in direct] == ["hub"]
    assert [d.session_id for d in mirrored] == ["supervisor"]
    assert direct[0].data == data


def test_mirror_wrapper_carries_topic_and_broker_time(baseline):
    data = encode_envelope(command())
    record = baseline.publish("orion", "agents/inbox/hub", data, 42)
    wrapped = next(d for d in record.deliveries if d.mirrored).data
    doc = json.loads(wrapped)
    assert doc == {"broker_ts_us": 42, "message": base64.b64encode(data).decode(), "topic": "agents/inbox/hub"}
    entry = MirrorEntry(receipt_us=42, topic=doc["topic"], broker_ts_us=42, data=data)
    assert entry.decoded()[0] == command()


def test_hardened_accepts_signed_commands(hardened, keystore):
    record = hardened.publish("orion", "agents/inbox/hub", signed(keystore, command()), 10)
    assert record.accepted


@pytest.mark.parametrize("session, topic, build, reason", [
    ("rogue", "agents/inbox/hub", lambda ks: encode_envelope(command()), "acl_denied"),
    ("orion", "iot/actuate/front-door", lambda ks: signed(ks, command()), "acl_denied"),
    ("orion", "agents/inbox/hub", lambda ks: encode_envelope(command()), "missing_auth"),
    ("orion", "agents/inbox/hub",
     lambda ks: encode_envelope(Envelope(MsgType.COMMAND, 1, b"{}", correlation_id=CID)), "missing_field(sender)"),
    ("orion", "agents/inbox/hub", lambda ks: b"garbage", "malformed"),
])
def test_hardened_rejections(hardened, keystore, session, topic, build, reason):
    record = hardened.publish(session, topic, build(keystore), 10)
    assert not record.accepted
    assert record.reason == reason
    assert record.deliveries == []


def test_hardened_rejects_replayed_bytes(hardened, keystore):
    data = signed(keystore, command())
    assert hardened.publish("orion", "agents/inbox/hub", data, 10).accepted
    assert hardened.publish("orion", "agents/inbox/hub", data, 20).reason == "replayed_nonce"


def test_hardened_policy_needs_keys():
    with pytest.raises(ValueError):
        BrokerPolicy(mode=Posture.HARDENED)


def test_hardened_denies_mirror_subscription_to_unlisted_principal(hardened):
    assert hardened.subscribe("rogue", "agents/mirror") is None
    assert hardened.denied_subscriptions == [{"session": "rogue", "filter": "agents/mirror"}]
    assert hardened.subscribe("supervisor", "agents/mirror") is not None


def test_parked_sessions_miss_messages(baseline):
    baseline.disconnect("hub")
    record = baseline.publish("orion", "agents/inbox/hub", encode_envelope(command()), 10)
    assert record.missed == ["hub"]
    assert all(d.session_id != "hub" for d in record.deliveries)


def test_reconnect_keeps_subscriptions(baseline):
    baseline.disconnect("hub")
    assert baseline.reconnect("hub") == 9_300
    assert baseline.sessions["hub"].state is SessionState.RECONNECTING
    baseline.restore("hub")
    record = baseline.publish("orion", "agents/inbox/hub", encode_envelope(command()), 10)
    assert "hub" in [d.session_id for d in record.deliveries]


def test_unknown_sessions(baseline):
    with pytest.raises(SessionError):
        baseline.reconnect("ghost")
    with pytest.raises(SessionError):
        baseline.connect("hub", "hub")


def test_parked_session_cannot_publish(baseline):
    baseline.disconnect("orion")
    with pytest.raises(SessionError):
        baseline.publish("orion", "agents/inbox/hub", b"{}", 1)


def test_one_delivery_per_subscriber_even_with_overlapping_filters(baseline):
    baseline.subscribe("hub", "agents/#")
    record = baseline.publish("orion", "agents/inbox/hub", encode_envelope(command()), 1)
    assert sum(1 for d in record.deliveries if d.session_id == "hub" and not d.mirrored) == 1


def test_event_log_export(baseline, tmp_path):
    baseline.publish("orion", "agents/inbox/hub", encode_envelope(command()), 7)
    path = tmp_path / "broker_log.jsonl"
    baseline.export_log(str(path))
    line = json.loads(path.read_text().splitlines()[0])
    assert line["verdict"] == "accepted"
    assert line["delivered_to"] == ["hub"]
    assert line["mirrored_to"] == ["supervisor"]


def random_publishes(broker, rng, count):
    topics = ["agents/inbox/hub", "agents/inbox/orion", "iot/actuate/front-door", "iot/status/hub", "agents/broadcast"]
    records = []
    for i in range(count):
        env = Envelope(MsgType.STATUS, i, b'{"seq":%d}' % i, sender=rng.choice(["orion", "hub"]))
        session = rng.choice(["orion", "hub", "rogue"])
        records.append(broker.publish(session, rng.choice(topics), encode_envelope(env), i * 10))
    return records


def test_mirror_sees_every_accepted_publish_exactly_once(baseline):
    records = random_publishes(baseline, random.Random(12), 200)
    accepted = sorted((r.topic, r.broker_ts_us) for r in records if r.accepted)
    mirrored = []
    for record in records:
        for delivery in record.deliveries:
            if delivery.mirrored:
                doc = json.loads(delivery.data)
                mirrored.append((doc["topic"], doc["broker_ts_us"]))
    assert len(accepted) == 200
    assert sorted(mirrored) == accepted


def test_deliveries_on_a_topic_follow_acceptance_order(baseline):
    baseline.subscribe("orion", "#")
    records = random_publishes(baseline, random.Random(13), 150)
    seen = {}
    for record in records:
        for delivery in record.deliveries:
            if delivery.session_id == "orion" and not delivery.mirrored:
                seen.setdefault(delivery.topic, []).append(record.broker_ts_us)
    assert set(seen) == {r.topic for r in records}
    for stamps in seen.values():
        assert stamps == sorted(stamps)


def test_hardened_broker_with_an_empty_acl_delivers_nothing(keystore):
    broker = make_broker(BrokerPolicy(mode=Posture.HARDENED, acl=[], keystore=keystore))
    assert len(broker.denied_subscriptions) == 3
    records = [broker.publish("orion", "agents/inbox/hub", signed(keystore, command()), 10)]
    records += random_publishes(broker, random.Random(14), 50)
    assert {r.reason for r in records} == {"acl_denied"}
    assert all(r.deliveries == [] for r in records)
