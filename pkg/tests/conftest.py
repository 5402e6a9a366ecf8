import copy
import os

import pytest

from models.scenario import ScenarioConfig, load_scenario_document
from sim.world import World

SCENARIO_DIR = os.path.join(os.path.dirname(__file__), "..", "src", "data", "scenarios")
GOLDEN_DIR = os.path.join(os.path.dirname(__file__), "golden")

SHIPPED_SCENARIOS = sorted(name[:-5] for name in os.listdir(SCENARIO_DIR) if name.endswith(".json"))

BASE_SCENARIO = {
    "name": "unit",
    "architecture": "edge_local",
    "seed": 1,
    "duration_us": 5_000_000,
    "agents": [
        {"id": "orion", "role": "orchestrator"},
        {"id": "percy", "role": "mobile", "link": "lan-zero-jitter",
         "inference": [
             {"kind": "local", "name": "phone-slm"},
             {"kind": "cloud", "name": "cloud-llm", "host": "api.anthropic.com"},
         ]},
        {"id": "hub", "role": "bridge", "link": "lan-zero-jitter"},
    ],
    "devices": [
        {"id": "front-door", "kind": "lock", "actuation_duration_us": 500_000},
        {"id": "porch-light", "kind": "light", "actuation_duration_us": 200_000},
    ],
}


def scenario_document(name: str) -> dict:
    return load_scenario_document(os.path.join(SCENARIO_DIR, f"{name}.json"))


@pytest.fixture
def make_document():
    """Deep copy of the small unit swarm with top-level overrides applied"""
    def factory(**overrides):
        document = copy.deepcopy(BASE_SCENARIO)
        document.update(overrides)
        return document
    return factory


@pytest.fixture
def make_config(make_document):
    def factory(**overrides):
        return ScenarioConfig.model_validate(make_document(**overrides))
    return factory


@pytest.fixture
def make_world(make_config):
    def factory(**overrides):
        return World(make_config(**overrides), SCENARIO_DIR)
    return factory


@pytest.fixture
def world(make_world):
    return make_world()


@pytest.fixture
def shipped():
    """Load a shipped scenario by name"""
    def factory(name: str, **overrides) -> ScenarioConfig:
        document = scenario_document(name)
        document.update(overrides)
        return ScenarioConfig.model_validate(document)
    return factory


_ID_ALPHABET = "abcdefghijklmnopqrstuvwxyz0123456789-_"


@pytest.fixture
def random_envelope():
    """Well-formed envelopes drawn from a seeded random.Random"""
    from models.envelope import Envelope, MsgType

    def factory(rng, complete: bool = False) -> Envelope:
        sender = "".join(rng.choice(_ID_ALPHABET) for _ in range(rng.randint(1, 12)))
        correlation_id = "%032x" % rng.getrandbits(128)
        if not complete and rng.random() < 0.2:
            sender = None
        if not complete and rng.random() < 0.2:
            correlation_id = None
        return Envelope(
            msg_type=rng.choice(list(MsgType)),
            timestamp_us=rng.randrange(0, 2 ** 40),
            payload=rng.randbytes(rng.randint(0, 64)),
            sender=sender,
            correlation_id=correlation_id,
        )
    return factory
