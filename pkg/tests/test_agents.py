import pytest

from agents.inference import InferenceEndpoint, LocalModelCancelled
from agents.orchestrator_agent import BurstResult, run_burst_benchmark, run_echo_benchmark
from config import Config
from models.agent_models import ActionType, EndpointKind, EndpointSpec
from models.envelope import MsgType
from models.scenario import ScenarioConfig
from sim.world import World


HOP_US = 11_800


def test_echo_round_trip_on_a_fixed_link(world):
    world.start()
    result = run_echo_benchmark(world.orchestrator, "hub", 50, 5, world)
    assert result.samples == [2 * HOP_US] * 5
    assert result.timeouts == 0
    assert world.orchestrator.outstanding == {}


def test_echo_to_a_silent_peer_times_out(world):
    world.start()
    result = run_echo_benchmark(world.orchestrator, "ghost", 50, 2, world, timeout_us=100_000)
    assert result.samples == []
    assert result.timeouts == 2


def test_burst_echoes_do_not_wait_for_replies(world):
    world.start()
    result = run_burst_benchmark(world.orchestrator, "hub", world, payload_size=16, n=10, spacing_us=1_000)
    assert result.samples == [2 * HOP_US] * 10
    assert result.degradation_us == 0.0


def test_burst_degradation_compares_first_and_last_decile():
    result = BurstResult(target="hub", payload_size=0, requested=20, samples=[10] * 10 + [30] * 10)
    assert result.degradation_us == 20.0


def test_command_is_actuated_then_audited(world):
    issued = {}
    world.sim.schedule(1_000_000, "cmd", lambda: issued.setdefault(
        "env", world.orchestrator.issue_command("front-door", ActionType.LOCK)))
    world.run()
    cid = issued["env"].correlation_id
    [actuation] = world.actuation_log
    assert actuation.correlation_id == cid
    assert actuation.started_us == 1_000_000 + HOP_US
    assert actuation.completes_us == actuation.started_us + 500_000
    assert world.devices["front-door"].state == "locked"
    # bridge uplink only; the supervisor sits next to the broker
    assert world.audit_receipts()[cid] == actuation.started_us + HOP_US
    assert world.unaudited_actuations() == 0
    assert world.check_invariants() == []


def test_unknown_device_is_reported_not_actuated(world):
    world.sim.schedule(1_000_000, "cmd",
                       lambda: world.orchestrator.issue_command("garage", ActionType.LOCK))
    world.run()
    assert world.actuation_log == []
    assert world.bridge.errors[0]["error"] == "unknown_device"


def test_device_state_changes_only_on_completion(world):
    world.sim.schedule(1_000_000, "cmd",
                       lambda: world.orchestrator.issue_command("porch-light", ActionType.TURN_ON))
    world.run(until_us=1_100_000)
    assert world.devices["porch-light"].state == "idle"
    world.run()
    assert world.devices["porch-light"].history == ["on"]


def test_heartbeats_stop_at_duration(world):
    world.run()
    percy = world.agents["percy"]
    assert percy.heartbeats_sent == 10
    assert world.agents["orion"].trust.instance_tags["percy"] == percy.instance_tag


def test_instance_tags_differ_per_agent_and_repeat_per_seed(make_world):
    first, second, other = make_world(), make_world(), make_world(seed=2)
    tags = [agent.instance_tag for agent in first.agents.values()]
    assert len(set(tags)) == len(tags)
    assert all(len(tag) == 8 for tag in tags)
    assert tags == [agent.instance_tag for agent in second.agents.values()]
    assert tags != [agent.instance_tag for agent in other.agents.values()]


def test_bridge_defers_actuation_until_link_is_stable(make_document):
    document = make_document(reconnect={"mean_us": 9_300, "sigma_us": 0})
    document["agents"][2].update(defer_when_unstable=True, stability_window_us=500_000)
    document["partitions"] = [{"link": "lan-zero-jitter", "start_us": 1_000_000, "duration_us": 1_000_000}]
    world = World(ScenarioConfig.model_validate(document))
    world.sim.schedule(2_100_000, "cmd",
                       lambda: world.orchestrator.issue_command("front-door", ActionType.LOCK))
    world.run()
    [deferred] = world.bridge.deferred
    assert deferred["deferred_us"] == 2_500_000 - (2_100_000 + HOP_US)
    assert world.actuation_log[0].started_us == 2_500_000
    assert world.actuation_log[0].deferred_us == deferred["deferred_us"]


def test_blackout_closes_at_session_restore(make_document):
    document = make_document(reconnect={"mean_us": 9_300, "sigma_us": 0})
    document["partitions"] = [{"link": "lan-zero-jitter", "start_us": 1_000_000, "duration_us": 1_000_000,
                               "network_recovery_us": 400_000, "bridge_setup_us": 100_000}]
    world = World(ScenarioConfig.model_validate(document))
    world.run()
    [interval] = world.blackouts
    assert interval.end_us == 2_500_000 + 9_300
    assert interval.duration_us == 1_509_300
    assert world.check_invariants() == []


def test_small_request_stays_local(world):
    outcome = world.infer(world.agents["percy"], 1_000)
    assert outcome.status == "local"
    assert outcome.attempts == ["phone-slm"]
    assert len(world.ledger) == 0


def test_oversized_request_cancels_locally_then_falls_back(world):
    outcome = world.infer(world.agents["percy"], 70_000)
    assert outcome.status == "cloud"
    assert outcome.attempts == ["phone-slm", "cloud-llm"]
    assert outcome.egress_bytes == 70_000
    assert outcome.dns_events == Config.DNS_RETRY_COUNT
    [entry] = world.ledger.entries
    assert entry.cause.value == "inference_fallback"
    assert not outcome.marker_published


def test_local_model_cancel_status():
    endpoint = InferenceEndpoint(EndpointSpec(kind=EndpointKind.LOCAL, name="phone-slm",
                                              context_capacity_bytes=1_024))
    with pytest.raises(LocalModelCancelled) as excinfo:
        endpoint.invoke("percy", 1_025)
    assert excinfo.value.status_code == 499
    assert endpoint.invoke("percy", 1_024)


def test_forbidden_fallback_fails_the_call(make_world):
    world = make_world(boundary={"cloud_fallback": "forbid"})
    assert world.infer(world.agents["percy"], 70_000) is None
    assert world.inference_failures[0]["reason"] == "sovereignty_denied"
    assert len(world.ledger) == 0
    assert len(world.resolver.log) == 0


def test_agent_without_models_cannot_infer(world):
    assert world.infer(world.agents["hub"], 10) is None
    assert world.inference_failures[0]["reason"] == "no_inference_chain"


def test_embedded_documents_diverge_per_agent(world):
    percy, hub = world.agents["percy"], world.agents["hub"]
    world.sim.schedule(1_000_000, "share", lambda: world.orchestrator.share_document("percy", "plan", b"v1"))
    world.run(until_us=2_000_000)
    assert percy.view_of("plan") == b"v1"
    percy.revise_document("plan", b"v2")
    assert world.measure_divergence("plan") == 2
    assert hub.view_of("plan") is None


def test_state_plane_documents_share_one_head(make_world):
    world = make_world(state_mode="state_plane")
    percy = world.agents["percy"]
    world.sim.schedule(1_000_000, "share", lambda: world.orchestrator.share_document("percy", "plan", b"v1"))
    world.run(until_us=2_000_000)
    assert percy.revise_document("plan", b"v2") is None
    assert world.orchestrator.revise_document("plan", b"v3") is not None
    assert world.orchestrator.view_of("plan") == percy.view_of("plan") == b"v2"
    assert world.measure_divergence("plan") == 1
    assert len(world.conflict_events) == 1


def test_partition_leaves_a_gap_in_the_heartbeat_stream(make_document):
    document = make_document(reconnect={"mean_us": 9_300, "sigma_us": 0})
    document["partitions"] = [{"link": "lan-zero-jitter", "start_us": 1_000_000, "duration_us": 2_000_000}]
    world = World(ScenarioConfig.model_validate(document))
    world.run()
    percy = world.agents["percy"]
    # ticks at 1.0 to 2.5 s fall in the partition, 3.0 s lands before the session is back
    assert percy.missed_heartbeats == 5
    assert percy.heartbeats_sent == 5
    arrivals = world.agents["orion"].heartbeat_arrivals["percy"]
    gaps = [later - earlier for earlier, later in zip(arrivals, arrivals[1:])]
    assert max(gaps) == 3_000_000
    assert gaps.count(500_000) == len(gaps) - 1


def test_every_echo_request_is_answered_or_times_out(make_document):
    document = make_document(duration_us=60_000_000,
                             links={"flaky": {"base_latency_us": 11_800, "loss_rate": 0.3}})
    document["agents"][2]["link"] = "flaky"
    world = World(ScenarioConfig.model_validate(document))
    world.start()
    result = run_echo_benchmark(world.orchestrator, "hub", 50, 40, world, timeout_us=100_000)
    lost = [d for d in world.drops if d["stage"] == "lost" and d["session"] == "hub"
            and d["topic"] in ("agents/inbox/hub", "agents/inbox/orion")]
    assert len(result.samples) + result.timeouts == 40
    assert result.timeouts == len(lost) > 0
    assert set(result.samples) == {2 * 11_800}
    assert world.orchestrator.orphan_replies == 0
    assert world.orchestrator.outstanding == {}


def test_configured_key_id_selects_the_signing_key(make_document):
    document = make_document(posture="hardened", keys=[
        {"key_id": "percy-old", "sender": "percy", "hex": "11" * 16},
        {"key_id": "percy-new", "sender": "percy", "hex": "22" * 16},
    ])
    document["agents"][1]["key_id"] = "percy-new"
    world = World(ScenarioConfig.model_validate(document))
    env = world.agents["percy"].envelope(MsgType.STATUS, {"ok": True})
    assert world.sign(env).key_id == "percy-new"


def test_without_key_id_the_first_key_of_the_sender_signs(make_document):
    document = make_document(posture="hardened", keys=[
        {"key_id": "percy-old", "sender": "percy", "hex": "11" * 16},
        {"key_id": "percy-new", "sender": "percy", "hex": "22" * 16},
    ])
    world = World(ScenarioConfig.model_validate(document))
    env = world.agents["percy"].envelope(MsgType.STATUS, {"ok": True})
    assert world.sign(env).key_id == "percy-old"
