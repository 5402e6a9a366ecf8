import itertools
import json
import math
import random
from fractions import Fraction

import pytest

from attacks.injectors import AttackKind, AttackOutcome
from metrics.failover import decompose, world_failovers
from metrics.provenance import (
    actuation_audit_gap, device_durations, interceptable, provenance_audit, world_audit_gap,
)
from metrics.report import RunResults, render_machine, render_report, render_text
from metrics.stats import EmptySamples, summarize
from models.agent_models import Device, DeviceKind
from models.broker_models import MirrorEntry
from models.envelope import Envelope, MsgType
from models.netsim_models import BlackoutInterval, PartitionEvent
from sim.world import World
from tools.envelope_codec import canonical_json, encode_envelope


def oracle(samples):
    ordered = sorted(samples)
    n = len(ordered)

    def pick(pct):
        return ordered[max(1, math.ceil(Fraction(pct * n, 100))) - 1]

    mean = Fraction(sum(ordered), n)
    variance = sum((Fraction(x) - mean) ** 2 for x in ordered) / n
    return {"n": n, "mean": float(mean), "median": pick(50), "p95": pick(95), "p99": pick(99),
            "stddev": math.sqrt(variance), "min": ordered[0], "max": ordered[-1]}


def assert_matches_oracle(samples):
    stats = summarize(samples)
    expected = oracle(samples)
    assert (stats.n, stats.median, stats.p95, stats.p99, stats.min, stats.max) == (
        expected["n"], expected["median"], expected["p95"], expected["p99"], expected["min"], expected["max"])
    assert stats.mean == expected["mean"]
    assert stats.stddev == pytest.approx(expected["stddev"], rel=1e-12, abs=1e-12)


def test_one_to_hundred():
    stats = summarize(range(1, 101))
    assert (stats.median, stats.p95, stats.p99) == (50, 95, 99)
    assert stats.mean == 50.5


def test_constant_samples():
    stats = summarize([23_600] * 150)
    assert stats.mean == stats.median == stats.p95 == stats.p99 == 23_600
    assert stats.stddev == 0


def test_single_sample():
    stats = summarize([7])
    assert (stats.median, stats.p95, stats.p99, stats.min, stats.max) == (7, 7, 7, 7, 7)


def test_empty_samples():
    with pytest.raises(EmptySamples):
        summarize([])


def test_exhaustive_small_inputs():
    for n in range(1, 9):
        for samples in itertools.product((0, 1, 7), repeat=n):
            assert_matches_oracle(list(samples))


def test_randomized_inputs():
    rng = random.Random(2024)
    for _ in range(1_000):
        n = rng.randint(1, 400)
        assert_matches_oracle([rng.randint(0, 200_000) for _ in range(n)])


def test_order_statistics_are_monotone():
    rng = random.Random(5)
    stats = summarize(rng.randint(1, 10**6) for _ in range(10_000))
    assert stats.min <= stats.median <= stats.p95 <= stats.p99 <= stats.max


# --- provenance ---

def mirrored(env: Envelope, at: int = 0) -> MirrorEntry:
    return MirrorEntry(receipt_us=at, topic="agents/inbox/hub", broker_ts_us=at, data=encode_envelope(env))


def command(n: int, sender="orion", body=None) -> Envelope:
    return Envelope(MsgType.COMMAND, n, canonical_json(body or {"action": "lock", "device": "front-door"}),
                    sender=sender, correlation_id=f"{n:032x}")


def test_cooperative_commands_are_fully_covered():
    audit = provenance_audit([mirrored(command(n)) for n in range(100)], 100)
    assert audit.n == 100
    assert audit.complete
    assert audit.to_dict()["coverage"] == {"sender": 1.0, "timestamp": 1.0, "correlation_id": 1.0,
                                           "msg_type": 1.0, "action": 1.0}


def test_one_missing_sender_among_a_hundred():
    log = [mirrored(command(n)) for n in range(100)] + [mirrored(command(100, sender=None))]
    audit = provenance_audit(log)
    assert audit.n == 101
    assert audit.to_dict()["coverage"]["sender"] == 0.9901
    assert not audit.complete


def test_only_actuation_commands_are_audited():
    heartbeat = Envelope(MsgType.HEARTBEAT, 1, b'{"instance":"a","seq":0}', sender="orion")
    infer = command(2, body={"kind": "infer", "data": "x"})
    no_action = command(3, body={"device": "front-door"})
    audit = provenance_audit([mirrored(heartbeat), mirrored(infer), mirrored(no_action)])
    assert audit.n == 1
    assert audit.coverage["action"] == 0.0


def test_empty_log_is_vacuous():
    audit = provenance_audit([])
    assert audit.vacuous
    assert audit.to_dict() == {"n": 0, "vacuous": True, "expected_commands": None,
                               "coverage": {name: 1.0 for name in
                                            ("sender", "timestamp", "correlation_id", "msg_type", "action")}}


def test_cooperative_run_from_shipped_scenario(shipped):
    world = World(shipped("cooperative-provenance"))
    world.run()
    audit = provenance_audit(world.mirror_log, len(world.command_log))
    assert audit.n == 100
    assert audit.complete
    assert world.check_invariants() == []


# --- actuation-to-audit gap ---

def test_interceptability_verdicts():
    report = actuation_audit_gap({"a": 0, "b": 10, "c": 20}, {"a": 23_000, "b": 24_010},
                                 {"lock": 500_000, "relay": 5_000})
    assert report.unmatched == 1
    assert report.stats.n == 2
    assert report.verdicts == {"lock": True, "relay": False}
    assert report.to_dict()["devices"]["relay"] == {"actuation_duration_us": 5_000, "interceptable": False}


def test_interceptable_is_monotone_in_duration():
    verdicts = [interceptable(23_600, duration) for duration in range(0, 60_000, 100)]
    assert verdicts == sorted(verdicts)


def test_no_receipts_means_no_stats():
    report = actuation_audit_gap({"a": 0}, {}, {"lock": 500_000})
    assert report.stats is None
    assert report.verdicts == {}
    assert report.to_dict()["devices"]["lock"]["interceptable"] is None


def test_device_durations_take_the_fastest_of_each_kind():
    devices = [Device("front-door", DeviceKind.LOCK, 500_000), Device("back-door", DeviceKind.LOCK, 400_000),
               Device("thermo", DeviceKind.SENSOR, 1_000)]
    assert device_durations(devices) == {"lock": 400_000}


# --- failover ---

def test_decomposition_is_additive():
    partition = PartitionEvent("lan-zero-jitter", 2_000_000, 2_000_000, 33_600_000, 100_000)
    interval = BlackoutInterval("lan-zero-jitter", 2_000_000, partition.link_down_until_us,
                                end_us=37_709_300, reconnect_us=9_300)
    decomposition = decompose(partition, interval, 1)
    assert decomposition.additive
    assert decomposition.to_dict() == {
        "partition_s": 2.0, "network_recovery_s": 33.6, "bridge_setup_s": 0.1, "reconnect_ms": 9.3,
        "total_blackout_s": 35.7093, "total_blackout_us": 35_709_300, "unaudited_actuations": 1,
    }


def test_open_blackout_has_no_decomposition():
    partition = PartitionEvent("lan-zero-jitter", 0, 10)
    assert decompose(partition, BlackoutInterval("lan-zero-jitter", 0, 10)) is None


def test_failover_scenario(shipped):
    world = World(shipped("failover-wifi"))
    world.run()
    [failover] = world_failovers(world)
    assert failover.total_blackout_us == 35_709_300
    assert failover.additive
    assert failover.unaudited_actuations == 1
    gap = world_audit_gap(world)
    assert gap.stats.max > failover.total_blackout_us
    assert gap.verdicts == {"lock": False}


# --- reports ---

def bus_outcome(kind, posture, accepted, reason=None):
    verdicts = ["accepted"] if accepted else [f"rejected:{reason}"]
    return AttackOutcome(kind=kind, posture=posture, verdicts=verdicts, executions=int(accepted),
                         evidence={"bridge_actuated": accepted}).to_dict()


@pytest.fixture
def results():
    results = RunResults(scenario="unit", seed=7, posture="baseline")
    results.adversarial = {
        "baseline": [bus_outcome(kind, "baseline", True) for kind in
                     (AttackKind.MISSING_SENDER, AttackKind.SPOOFED_SENDER, AttackKind.REPLAY,
                      AttackKind.DIRECT_SAFETY_PUBLISH)],
        "hardened": [bus_outcome(AttackKind.SPOOFED_SENDER, "hardened", False, "missing_auth")],
    }
    results.latency = [{"target": "hub", "payload_size": 50, "requested": 3, "timeouts": 0,
                        "stats": summarize([23_600, 23_600, 23_700]).to_dict()}]
    return results


def test_render_is_deterministic(results):
    first, second = render_report(results), render_report(results)
    assert first == second
    assert json.loads(first.machine)["sections"]["latency"][0]["stats"]["p99_us"] == 23_700


def test_adversarial_rows_are_labelled(results):
    text = render_report(results).text
    for label in ("Missing sender field", "Spoofed sender", "Replayed message", "Direct safety publish"):
        assert label in text
    assert "Rejected (missing_auth)" in text
    assert "not run" in text


def test_machine_document_round_trips_through_text(results):
    document = results.to_document()
    assert document["schema_version"] == 1
    assert document["percentile_method"] == "nearest-rank"
    assert render_text(json.loads(render_machine(document))) == render_text(document)


def test_empty_run_reports_no_data():
    results = RunResults(scenario="empty", seed=0, posture="baseline")
    assert results.empty
    text = render_report(results).text
    assert "Echo latency: no data" in text
    assert "Failover decomposition: no data" in text
    assert "Invariants: all hold" in text


def test_violations_are_listed():
    results = RunResults(scenario="bad", seed=0, posture="baseline", invariants=["virtual clock moved backwards"])
    assert "  - virtual clock moved backwards" in render_report(results).text
