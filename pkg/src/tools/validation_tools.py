from dataclasses import dataclass
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

from pydantic import ValidationError

from models.envelope import is_valid_agent_id
from models.scenario import ScenarioConfig, resolve_scenario_path
from sim.links import load_link_profiles
from tools.signing import derive_simulation_key, load_keystore
from tools.topics import load_acl, parse_acl_lines


@dataclass(frozen=True)
class ConfigIssue:
    location: str
    message: str

    def __str__(self) -> str:
        return f"{self.location}: {self.message}"


def _location(parts: Tuple[Any, ...]) -> str:
    path = ""
    for part in parts:
        path += f"[{part}]" if isinstance(part, int) else (f".{part}" if path else str(part))
    return path or "<root>"


def parse_scenario(document: Mapping[str, Any]) -> Tuple[Union[ScenarioConfig, None], List[ConfigIssue]]:
    """Schema check only: unknown keys, types and ranges"""
    try:
        return ScenarioConfig.model_validate(document), []
    except ValidationError as exc:
        return None, [ConfigIssue(_location(error["loc"]), error["msg"]) for error in exc.errors()]


def validate_unique_ids(config: ScenarioConfig) -> List[ConfigIssue]:
    issues = []
    seen: Dict[str, str] = {}
    principals = {config.operator_principal: "operator_principal",
                  config.supervisor_principal: "supervisor_principal",
                  config.rogue_principal: "rogue_principal"}
    for collection in ("agents", "devices"):
        for index, item in enumerate(getattr(config, collection)):
            location = f"{collection}[{index}].id"
            if collection == "agents" and not is_valid_agent_id(item.id):
                issues.append(ConfigIssue(location, f"invalid agent id {item.id!r}"))
            elif item.id in seen:
                issues.append(ConfigIssue(location, f"duplicate id {item.id!r} (also at {seen[item.id]})"))
            elif item.id in principals:
                issues.append(ConfigIssue(location, f"id {item.id!r} collides with {principals[item.id]}"))
            else:
                seen[item.id] = location
    return issues


def validate_roles(config: ScenarioConfig) -> List[ConfigIssue]:
    issues = []
    orchestrators = [a for a in config.agents if a.role == "orchestrator"]
    if len(orchestrators) != 1:
        issues.append(ConfigIssue("agents", f"exactly one orchestrator required, found {len(orchestrators)}"))
    actuated = [d for d in config.devices if d.kind != "sensor"]
    if config.devices and not any(a.role == "bridge" for a in config.agents):
        issues.append(ConfigIssue("agents", "devices are declared but no bridge owns them"))
    if (config.workload.commands or config.attack_suite) and not actuated:
        issues.append(ConfigIssue("devices", "commands need at least one actuatable device"))
    return issues


def validate_links(config: ScenarioConfig) -> List[ConfigIssue]:
    known = set(load_link_profiles()) | set(config.links)
    issues = []
    for index, agent in enumerate(config.agents):
        if agent.link is not None and agent.link not in known:
            issues.append(ConfigIssue(f"agents[{index}].link", f"unknown link profile {agent.link!r}"))
    for index, partition in enumerate(config.partitions):
        if partition.link not in known:
            issues.append(ConfigIssue(f"partitions[{index}].link", f"unknown link profile {partition.link!r}"))
        elif not any(a.link == partition.link for a in config.agents):
            issues.append(ConfigIssue(f"partitions[{index}].link", f"no agent uses link {partition.link!r}"))
    return issues


def validate_references(config: ScenarioConfig) -> List[ConfigIssue]:
    agents = {a.id: a for a in config.agents}
    devices = {d.id: d for d in config.devices}
    issues = []
    for index, device_id in enumerate(config.workload.command_devices):
        if device_id not in devices:
            issues.append(ConfigIssue(f"workload.command_devices[{index}]", f"unknown device {device_id!r}"))
        elif devices[device_id].kind == "sensor":
            issues.append(ConfigIssue(f"workload.command_devices[{index}]", f"{device_id!r} is a sensor"))
    if config.workload.inference_agent and config.workload.inference_agent not in agents:
        issues.append(ConfigIssue("workload.inference_agent",
                                  f"unknown agent {config.workload.inference_agent!r}"))
    for index, partition in enumerate(config.partitions):
        if partition.safety_command and partition.safety_command not in devices:
            issues.append(ConfigIssue(f"partitions[{index}].safety_command",
                                      f"unknown device {partition.safety_command!r}"))
        if partition.safety_command and partition.start_us < partition.command_lead_us:
            issues.append(ConfigIssue(f"partitions[{index}].command_lead_us",
                                      "safety command would be issued before time 0"))
    if config.latency and config.latency.target not in agents:
        issues.append(ConfigIssue("latency.target", f"unknown agent {config.latency.target!r}"))
    if config.latency and config.latency.burst_target and config.latency.burst_target not in agents:
        issues.append(ConfigIssue("latency.burst_target", f"unknown agent {config.latency.burst_target!r}"))
    if config.reconnect_bench:
        agent = agents.get(config.reconnect_bench.agent)
        if agent is None:
            issues.append(ConfigIssue("reconnect_bench.agent", f"unknown agent {config.reconnect_bench.agent!r}"))
        elif agent.link is None:
            issues.append(ConfigIssue("reconnect_bench.agent", f"agent {agent.id!r} has no link to block"))
    return issues


def validate_boundary(config: ScenarioConfig) -> List[ConfigIssue]:
    issues = []
    for a_index, agent in enumerate(config.agents):
        for e_index, endpoint in enumerate(agent.inference):
            location = f"agents[{a_index}].inference[{e_index}]"
            if endpoint.kind == "cloud" and not endpoint.host:
                issues.append(ConfigIssue(f"{location}.host", "cloud endpoints need a host"))
            elif endpoint.kind == "cloud" and endpoint.host not in config.boundary.hosts:
                issues.append(ConfigIssue(f"{location}.host", f"host {endpoint.host!r} missing from boundary.hosts"))
    if config.workload.inference_calls and not any(a.inference for a in config.agents):
        issues.append(ConfigIssue("workload.inference_calls", "no agent has an inference endpoint"))
    return issues


def validate_keys(config: ScenarioConfig, base_dir: Optional[str] = None) -> List[ConfigIssue]:
    issues = []
    for index, key in enumerate(config.keys):
        try:
            raw = bytes.fromhex(key.hex)
        except ValueError:
            issues.append(ConfigIssue(f"keys[{index}].hex", "not a hex string"))
            continue
        if len(raw) < 16:
            issues.append(ConfigIssue(f"keys[{index}].hex", "keys must be at least 16 bytes"))
    if config.keys and config.keystore_file is not None:
        issues.append(ConfigIssue("keys", "declare either keys or keystore_file, not both"))
        return issues

    owners: Dict[str, str] = {}
    if config.keystore_file is not None:
        try:
            store = load_keystore(resolve_scenario_path(config.keystore_file, base_dir))
        except OSError as exc:
            return issues + [ConfigIssue("keystore_file", f"cannot read keystore: {exc.strerror or exc}")]
        except ValueError as exc:
            return issues + [ConfigIssue("keystore_file", str(exc))]
        owners = {key.key_id: key.sender for key in store}
    elif config.keys:
        owners = {key.key_id: key.sender for key in config.keys}
    else:
        owners = {derive_simulation_key(config.seed, agent.id).key_id: agent.id for agent in config.agents}

    for index, agent in enumerate(config.agents):
        if agent.key_id is None:
            continue
        owner = owners.get(agent.key_id)
        if owner is None:
            issues.append(ConfigIssue(f"agents[{index}].key_id", f"unknown key {agent.key_id!r}"))
        elif owner != agent.id:
            issues.append(ConfigIssue(f"agents[{index}].key_id",
                                      f"key {agent.key_id!r} belongs to {owner!r}, not {agent.id!r}"))
    return issues


def validate_acl(config: ScenarioConfig, base_dir: Optional[str] = None) -> List[ConfigIssue]:
    if config.acl is not None and config.acl_file is not None:
        return [ConfigIssue("acl", "declare either acl or acl_file, not both")]
    if config.acl is not None:
        issues = []
        for index, line in enumerate(config.acl):
            try:
                parse_acl_lines([line])
            except ValueError as exc:
                # drop the parser's "ACL line N" prefix; the location carries the index
                issues.append(ConfigIssue(f"acl[{index}]", str(exc).split(": ", 1)[-1]))
        return issues
    if config.acl_file is not None:
        try:
            load_acl(resolve_scenario_path(config.acl_file, base_dir))
        except OSError as exc:
            return [ConfigIssue("acl_file", f"cannot read ACL: {exc.strerror or exc}")]
        except ValueError as exc:
            return [ConfigIssue("acl_file", str(exc))]
    return []


CHECKS = (validate_unique_ids, validate_roles, validate_links, validate_references, validate_boundary)
FILE_CHECKS = (validate_keys, validate_acl)


def validate(document: Union[Mapping[str, Any], ScenarioConfig], base_dir: Optional[str] = None) -> List[ConfigIssue]:
    """Run every schema and cross-reference check; an empty list means the scenario is valid.

    base_dir is where relative keystore_file and acl_file paths are looked up.
    """
    if isinstance(document, ScenarioConfig):
        config, issues = document, []
    else:
        config, issues = parse_scenario(document)
    if config is None:
        return issues
    for check in CHECKS:
        issues.extend(check(config))
    for file_check in FILE_CHECKS:
        issues.extend(file_check(config, base_dir))
    return issues
