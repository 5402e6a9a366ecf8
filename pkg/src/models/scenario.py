import hashlib
import json
import os
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field

from config import Config
from tools.envelope_codec import canonical_json

Architecture = Literal["cloud_hosted", "edge_local", "hybrid"]
PostureName = Literal["baseline", "hardened"]
AttackName = Literal[
    "MissingSender", "SpoofedSender", "Replay", "DirectSafetyPublish",
    "EmbeddedStateDrift", "ForgedFlood", "InducedFallback", "PartitionBlackout",
]


class StrictModel(BaseModel):
    """Unknown keys are rejected: a typo must never silently change an experiment"""
    model_config = ConfigDict(extra="forbid")


class LinkProfileConfig(StrictModel):
    base_latency_us: int = Field(ge=0)
    jitter_median_us: float = Field(0.0, ge=0)
    jitter_sigma: float = Field(0.0, ge=0)
    per_byte_us: float = Field(0.0, ge=0)
    loss_rate: float = Field(0.0, ge=0, le=1)
    description: str = ""


class EndpointConfig(StrictModel):
    kind: Literal["local", "cloud"]
    name: str
    host: Optional[str] = None
    context_capacity_bytes: int = Field(Config.DEFAULT_CONTEXT_CAPACITY_BYTES, gt=0)


class AgentConfig(StrictModel):
    id: str
    role: Literal["orchestrator", "mobile", "bridge"]
    link: Optional[str] = None
    heartbeat_interval_us: int = Field(Config.DEFAULT_HEARTBEAT_INTERVAL_US, gt=0)
    inference: List[EndpointConfig] = Field(default_factory=list)
    key_id: Optional[str] = None
    defer_when_unstable: bool = False
    stability_window_us: int = Field(0, ge=0)


class DeviceConfig(StrictModel):
    id: str
    kind: Literal["lock", "light", "switch", "sensor", "valve", "relay"]
    actuation_duration_us: int = Field(gt=0)


class ReconnectConfig(StrictModel):
    mean_us: int = Field(Config.RECONNECT_MEAN_US, gt=0)
    sigma_us: int = Field(Config.RECONNECT_SIGMA_US, ge=0)


class BoundaryConfig(StrictModel):
    cloud_fallback: Literal["forbid", "allow_silent", "allow_with_marker"] = "allow_silent"
    sensitive_labels: List[str] = Field(default_factory=list)
    hosts: Dict[str, str] = Field(default_factory=lambda: {"api.anthropic.com": "160.79.104.10"})
    retry_count: int = Field(Config.DNS_RETRY_COUNT, ge=1)


class TrustConfig(StrictModel):
    mode: Optional[PostureName] = None
    distrust_threshold: int = Field(Config.DISTRUST_THRESHOLD, gt=0)
    oob_response_delay_us: int = Field(Config.OOB_RESPONSE_DELAY_US, ge=0)


class KeyConfig(StrictModel):
    key_id: str
    sender: str
    hex: str


class WorkloadConfig(StrictModel):
    start_us: int = Field(1_000_000, ge=0)
    interval_us: int = Field(20_000, gt=0)
    commands: int = Field(0, ge=0)
    actions: List[Literal["lock", "unlock", "turn_on", "turn_off", "set_level"]] = Field(
        default_factory=lambda: ["lock", "unlock", "turn_on", "turn_off", "set_level"])
    command_devices: List[str] = Field(default_factory=list)
    sensor_reads: int = Field(0, ge=0)
    status_publishes: int = Field(0, ge=0)
    inference_calls: int = Field(0, ge=0)
    inference_bytes: int = Field(6_498, gt=0)
    inference_agent: Optional[str] = None
    inference_label: Optional[str] = None


class LatencyConfig(StrictModel):
    target: str
    payload_sizes: List[int] = Field(default_factory=lambda: [50, 1024, 10240])
    n: int = Field(150, ge=0)
    timeout_us: int = Field(Config.ECHO_TIMEOUT_US, gt=0)
    burst_target: Optional[str] = None
    burst_n: int = Field(0, ge=0)
    burst_payload: int = Field(128, ge=0)
    burst_spacing_us: int = Field(1_000, ge=0)


class PartitionConfig(StrictModel):
    link: str
    start_us: int = Field(ge=0)
    duration_us: int = Field(gt=0)
    network_recovery_us: int = Field(0, ge=0)
    bridge_setup_us: int = Field(0, ge=0)
    safety_command: Optional[str] = None
    command_lead_us: int = Field(1_000, ge=0)


class ReconnectBenchConfig(StrictModel):
    agent: str
    n: int = Field(50, gt=0)
    block_durations_us: List[int] = Field(default_factory=lambda: [1_000_000, 5_000_000, 10_000_000])


class AttackConfig(StrictModel):
    kind: AttackName
    params: Dict[str, Any] = Field(default_factory=dict)


class ScenarioConfig(StrictModel):
    name: str
    description: str = ""
    architecture: Architecture
    seed: int = 0
    duration_us: int = Field(10_000_000, gt=0)
    posture: PostureName = "baseline"
    state_mode: Optional[Literal["embedded", "state_plane"]] = None
    agents: List[AgentConfig]
    devices: List[DeviceConfig] = Field(default_factory=list)
    links: Dict[str, LinkProfileConfig] = Field(default_factory=dict)
    reconnect: ReconnectConfig = Field(default_factory=ReconnectConfig)
    boundary: BoundaryConfig = Field(default_factory=BoundaryConfig)
    trust: TrustConfig = Field(default_factory=TrustConfig)
    keys: List[KeyConfig] = Field(default_factory=list)
    keystore_file: Optional[str] = None
    acl: Optional[List[str]] = None
    acl_file: Optional[str] = None
    operator_principal: str = "operator"
    supervisor_principal: str = "supervisor"
    rogue_principal: str = "rogue"
    workload: WorkloadConfig = Field(default_factory=WorkloadConfig)
    latency: Optional[LatencyConfig] = None
    partitions: List[PartitionConfig] = Field(default_factory=list)
    reconnect_bench: Optional[ReconnectBenchConfig] = None
    attacks: List[AttackConfig] = Field(default_factory=list)
    attack_suite: bool = False

    @property
    def trust_mode(self) -> str:
        return self.trust.mode or self.posture

    @property
    def effective_state_mode(self) -> str:
        if self.state_mode:
            return self.state_mode
        return "state_plane" if self.posture == "hardened" else "embedded"

    def digest(self) -> str:
        return hashlib.sha256(canonical_json(self.model_dump(mode="json"))).hexdigest()

    def with_overrides(self, seed: Optional[int] = None, posture: Optional[str] = None) -> "ScenarioConfig":
        updates: Dict[str, Any] = {}
        if seed is not None:
            updates["seed"] = seed
        if posture is not None:
            updates["posture"] = posture
        return self.model_copy(update=updates)


class RunManifest(StrictModel):
    scenario: str
    config_digest: str
    seed: int
    posture: PostureName
    artifacts: Dict[str, str]
    command: str = "run"
    posture_override: Optional[PostureName] = None
    base_dir: Optional[str] = None
    tool_version: str = Config.TOOL_VERSION
    created_at: str = ""

    def deterministic_view(self) -> Dict[str, Any]:
        """Everything except the creation timestamp"""
        return self.model_dump(exclude={"created_at"})


def resolve_scenario_path(path: str, base_dir: Optional[str]) -> str:
    """Relative keystore and ACL paths are taken from the scenario file's directory"""
    if os.path.isabs(path) or base_dir is None:
        return path
    return os.path.join(base_dir, path)


def load_scenario_document(path: str) -> Dict[str, Any]:
    with open(path, 'r') as file:
        return json.load(file)
