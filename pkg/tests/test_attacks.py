import os

import pytest

from attacks.injectors import (
    BUS_ATTACKS, AttackKind, UnknownAttack, inference_request, parse_attack_kind, run_attack, run_suite,
)
from models.scenario import ScenarioConfig, load_scenario_document
from sim.world import World

SCENARIO_DIR = os.path.join(os.path.dirname(__file__), "..", "src", "data", "scenarios")


def suite_world(name: str) -> World:
    document = load_scenario_document(os.path.join(SCENARIO_DIR, f"{name}.json"))
    return World(ScenarioConfig.model_validate(document), SCENARIO_DIR)


@pytest.fixture(scope="module")
def baseline():
    return {o.kind: o for o in run_suite("baseline", suite_world("baseline-attack-suite"))}


@pytest.fixture(scope="module")
def hardened():
    return {o.kind: o for o in run_suite("hardened", suite_world("hardened-attack-suite"))}


def test_suite_runs_every_attack_once(baseline, hardened):
    assert list(baseline) == list(AttackKind)
    assert list(hardened) == list(AttackKind)


def test_baseline_broker_accepts_every_bus_attack(baseline):
    for kind in BUS_ATTACKS:
        assert baseline[kind].accepted, kind
        assert baseline[kind].verdicts == ["accepted"]


@pytest.mark.parametrize("kind", [AttackKind.SPOOFED_SENDER, AttackKind.REPLAY, AttackKind.DIRECT_SAFETY_PUBLISH])
def test_baseline_bridge_actuates(baseline, kind):
    assert baseline[kind].executions == 1
    assert baseline[kind].evidence["bridge_actuated"]


def test_baseline_replay_executes_the_command_twice(baseline):
    evidence = baseline[AttackKind.REPLAY].evidence
    assert evidence["executions_for_correlation_id"] == 2
    assert evidence["audits_for_correlation_id"] == 2


def test_missing_sender_is_untraceable(baseline):
    assert not baseline[AttackKind.MISSING_SENDER].evidence["traceable_sender"]


def test_hardened_broker_rejects_every_bus_attack_for_distinct_reasons(hardened):
    reasons = {kind: hardened[kind].rejection_reasons for kind in BUS_ATTACKS}
    assert reasons == {
        AttackKind.MISSING_SENDER: ["missing_field(sender)"],
        AttackKind.SPOOFED_SENDER: ["missing_auth"],
        AttackKind.REPLAY: ["replayed_nonce"],
        AttackKind.DIRECT_SAFETY_PUBLISH: ["acl_denied"],
    }
    assert sum(hardened[kind].accepted for kind in BUS_ATTACKS) == 0
    assert all(hardened[kind].executions == 0 for kind in BUS_ATTACKS)


def test_embedded_state_drifts(baseline):
    evidence = baseline[AttackKind.EMBEDDED_STATE_DRIFT].evidence
    assert evidence["state_mode"] == "embedded"
    assert evidence["divergent_copies"] == 2
    assert evidence["conflicts"] == 0


def test_state_plane_reports_the_conflict(hardened):
    evidence = hardened[AttackKind.EMBEDDED_STATE_DRIFT].evidence
    assert evidence["state_mode"] == "state_plane"
    assert evidence["divergent_copies"] == 1
    assert evidence["conflicts"] >= 1
    assert evidence["diverging_paths"] == ["plan"]


def test_forged_flood_locks_out_the_baseline_operator(baseline):
    evidence = baseline[AttackKind.FORGED_FLOOD].evidence
    assert evidence["k"] == 20
    assert evidence["distrusted"]
    assert not evidence["legitimate_obeyed"]
    assert evidence["oob_required"]
    assert evidence["obeyed_after_oob"]
    assert evidence["lockout_us"] > 0
    assert evidence["refused_legitimate"] >= 1


def test_forged_flood_cannot_erode_hardened_trust(hardened):
    outcome = hardened[AttackKind.FORGED_FLOOD]
    evidence = outcome.evidence
    assert evidence["legitimate_obeyed"]
    assert evidence["refused_legitimate"] == 0
    assert evidence["lockout_us"] == 0
    assert not evidence["distrusted"]
    assert outcome.rejection_reasons == ["missing_auth"] * 20


def test_induced_fallback_is_silent_under_baseline(baseline):
    evidence = baseline[AttackKind.INDUCED_FALLBACK].evidence
    assert evidence["inference_status"] == "cloud"
    assert evidence["egress_entries"] >= 1
    assert evidence["dns_events"] >= 1
    assert evidence["coordination_anomalies"] == 0
    assert evidence["markers"] == 0
    assert evidence["dns_only"]


def test_induced_fallback_is_marked_when_required(hardened):
    evidence = hardened[AttackKind.INDUCED_FALLBACK].evidence
    assert evidence["egress_entries"] == 1
    assert evidence["markers"] == evidence["egress_entries"]
    assert not evidence["dns_only"]


def test_induced_fallback_is_refused_under_forbid(make_world):
    world = make_world(boundary={"cloud_fallback": "forbid"})
    outcome = run_attack(AttackKind.INDUCED_FALLBACK, {}, world)
    assert outcome.evidence["egress_entries"] == 0
    assert outcome.evidence["inference_reason"] == "sovereignty_denied"


def test_partition_blackout_hides_the_safety_actuation(baseline):
    evidence = baseline[AttackKind.PARTITION_BLACKOUT].evidence
    phases = evidence["partition_us"] + evidence["network_recovery_us"] + evidence["bridge_setup_us"]
    assert evidence["blackout_us"] == phases + evidence["reconnect_us"]
    assert evidence["unaudited_actuations"] == 1
    assert evidence["actuation_audit_gap_us"] > evidence["blackout_us"]


def test_inference_request_is_padded_exactly():
    assert len(inference_request(None, 111_616)) == 111_616
    assert len(inference_request("calendar", 500)) == 500


def test_unknown_attack_kind():
    assert parse_attack_kind("Replay") is AttackKind.REPLAY
    with pytest.raises(UnknownAttack):
        parse_attack_kind("Teleport")


def test_attack_marks_the_run_as_adversarial(world):
    run_attack("SpoofedSender", {"device": "porch-light", "action": "turn_on"}, world)
    assert not world.attack_free
    assert world.actuation_log[-1].device_id == "porch-light"
