"""Topic scheme, wildcard matching and topic ACLs."""
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, List

from paho.mqtt.client import topic_matches_sub

from config import Config
from models.envelope import require_agent_id


class AclAction(Enum):
    PUBLISH = "publish"
    SUBSCRIBE = "subscribe"


def inbox_topic(agent_id: str) -> str:
    return f"{Config.INBOX_PREFIX}/{require_agent_id(agent_id)}"


def actuate_topic(device_id: str) -> str:
    return f"{Config.ACTUATE_PREFIX}/{require_agent_id(device_id)}"


def sensor_topic(device_id: str) -> str:
    return f"{Config.SENSOR_PREFIX}/{require_agent_id(device_id)}"


def is_valid_topic(topic: str) -> bool:
    """Concrete topics: non-empty segments, no wildcards"""
    if not isinstance(topic, str) or not topic:
        return False
    return all(seg and "+" not in seg and "#" not in seg for seg in topic.split("/"))


def is_valid_filter(topic_filter: str) -> bool:
    """Filters: '+' as a whole segment anywhere, '#' only as the whole final segment"""
    if not isinstance(topic_filter, str) or not topic_filter:
        return False
    segments = topic_filter.split("/")
    for index, seg in enumerate(segments):
        if not seg:
            return False
        if seg == "#":
            if index != len(segments) - 1:
                return False
        elif "#" in seg or ("+" in seg and seg != "+"):
            return False
    return True


def topic_matches(topic_filter: str, topic: str) -> bool:
    if not is_valid_filter(topic_filter):
        raise ValueError(f"invalid topic filter: {topic_filter!r}")
    if not is_valid_topic(topic):
        raise ValueError(f"invalid topic: {topic!r}")
    return topic_matches_sub(topic_filter, topic)


def filter_covers(granted: str, requested: str) -> bool:
    """True when every topic matched by `requested` is also matched by `granted`"""
    g_segs = granted.split("/")
    r_segs = requested.split("/")
    for index, g in enumerate(g_segs):
        if g == "#":
            return True
        if index >= len(r_segs):
            return False
        r = r_segs[index]
        if r == "#":
            return False
        if g == "+":
            continue
        if r == "+" or g != r:
            return False
    return len(g_segs) == len(r_segs)


@dataclass(frozen=True)
class AclRule:
    principal: str
    action: AclAction
    topic_filter: str

    def __post_init__(self):
        if not is_valid_filter(self.topic_filter):
            raise ValueError(f"invalid ACL filter: {self.topic_filter!r}")

    def to_line(self) -> str:
        return f"{self.principal} {self.action.value} {self.topic_filter}"


def acl_allows(rules: Iterable[AclRule], principal: str, action: AclAction, target: str) -> bool:
    """Default-deny check. target is a topic for publish, a filter for subscribe."""
    for rule in rules:
        if rule.principal != principal or rule.action is not action:
            continue
        if action is AclAction.PUBLISH and topic_matches(rule.topic_filter, target):
            return True
        if action is AclAction.SUBSCRIBE and filter_covers(rule.topic_filter, target):
            return True
    return False


def parse_acl_lines(lines: Iterable[str]) -> List[AclRule]:
    """One rule per line: `principal action filter`; lines starting with # are comments"""
    rules = []
    for lineno, line in enumerate(lines, start=1):
        # '#' is also the multi-level wildcard, so only whole-line comments exist
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        parts = text.split()
        if len(parts) != 3:
            raise ValueError(f"ACL line {lineno}: expected 'principal action filter'")
        principal, action, topic_filter = parts
        try:
            acl_action = AclAction(action)
        except ValueError as exc:
            raise ValueError(f"ACL line {lineno}: unknown action {action!r}") from exc
        rules.append(AclRule(principal=principal, action=acl_action, topic_filter=topic_filter))
    return rules


def load_acl(path: str) -> List[AclRule]:
    return parse_acl_lines(Path(path).read_text(encoding="utf-8").splitlines())


def least_privilege_acl(roster: Iterable[tuple], extra_principals: Iterable[tuple] = ()) -> List[AclRule]:
    """Capability-scoped ACL for a roster of (agent_id, role) pairs.

    extra_principals are (principal, kind) pairs; kind is "operator" or
    "supervisor".
    """
    pub, sub = AclAction.PUBLISH, AclAction.SUBSCRIBE
    rules: List[AclRule] = []
    for agent_id, role in roster:
        rules += [
            AclRule(agent_id, pub, f"{Config.INBOX_PREFIX}/+"),
            AclRule(agent_id, pub, Config.BROADCAST_TOPIC),
            AclRule(agent_id, pub, Config.AUDIT_TOPIC),
            AclRule(agent_id, sub, inbox_topic(agent_id)),
            AclRule(agent_id, sub, Config.BROADCAST_TOPIC),
        ]
        if role == "bridge":
            rules += [
                AclRule(agent_id, pub, f"{Config.SENSOR_PREFIX}/+"),
                AclRule(agent_id, sub, f"{Config.ACTUATE_PREFIX}/+"),
            ]
    for principal, kind in extra_principals:
        if kind == "operator":
            rules.append(AclRule(principal, pub, f"{Config.INBOX_PREFIX}/+"))
        elif kind == "supervisor":
            rules += [
                AclRule(principal, sub, Config.MIRROR_TOPIC),
                AclRule(principal, sub, Config.AUDIT_TOPIC),
            ]
    return rules
