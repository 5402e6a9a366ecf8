import pytest

from tools.topics import (
    AclAction, AclRule, acl_allows, filter_covers, inbox_topic, least_privilege_acl, parse_acl_lines,
    topic_matches,
)


@pytest.mark.parametrize("topic_filter, topic, expected", [
    ("agents/inbox/+", "agents/inbox/hub", True),
    ("agents/inbox/+", "agents/inbox/hub/extra", False),
    ("agents/#", "agents/inbox/hub", True),
    ("#", "iot/actuate/front-door", True),
    ("iot/+/front-door", "iot/actuate/front-door", True),
    ("iot/actuate/front-door", "iot/actuate/back-door", False),
])
def test_wildcard_matching(topic_filter, topic, expected):
    assert topic_matches(topic_filter, topic) is expected


@pytest.mark.parametrize("bad_filter", ["agents/#/x", "agents/in+", ""])
def test_invalid_filters_raise(bad_filter):
    with pytest.raises(ValueError):
        topic_matches(bad_filter, "agents/inbox/hub")


def test_filter_covers():
    assert filter_covers("agents/#", "agents/inbox/+")
    assert filter_covers("agents/inbox/+", "agents/inbox/hub")
    assert not filter_covers("agents/inbox/hub", "agents/inbox/+")
    assert not filter_covers("agents/inbox/+", "agents/#")


def test_inbox_topic_rejects_wildcards():
    assert inbox_topic("hub") == "agents/inbox/hub"
    with pytest.raises(ValueError):
        inbox_topic("+")


def test_acl_is_default_deny():
    rules = parse_acl_lines(["# header", "orion publish agents/inbox/+", "hub subscribe iot/actuate/+"])
    assert acl_allows(rules, "orion", AclAction.PUBLISH, "agents/inbox/hub")
    assert not acl_allows(rules, "orion", AclAction.PUBLISH, "iot/actuate/front-door")
    assert not acl_allows(rules, "orion", AclAction.SUBSCRIBE, "agents/inbox/hub")
    assert acl_allows(rules, "hub", AclAction.SUBSCRIBE, "iot/actuate/front-door")
    assert not acl_allows(rules, "hub", AclAction.SUBSCRIBE, "iot/#")


def test_acl_wildcard_filter_is_not_a_comment():
    rules = parse_acl_lines(["supervisor subscribe agents/#"])
    assert rules == [AclRule("supervisor", AclAction.SUBSCRIBE, "agents/#")]
    assert rules[0].to_line() == "supervisor subscribe agents/#"


@pytest.mark.parametrize("line", ["orion publish", "orion shout agents/x", "orion publish agents/#/x"])
def test_acl_rejects_bad_lines(line):
    with pytest.raises(ValueError):
        parse_acl_lines([line])


def test_least_privilege_acl():
    rules = least_privilege_acl([("orion", "orchestrator"), ("hub", "bridge")],
                                [("operator", "operator"), ("supervisor", "supervisor")])

    def allows(*args):
        return acl_allows(rules, *args)

    assert allows("orion", AclAction.PUBLISH, "agents/inbox/hub")
    assert not allows("orion", AclAction.PUBLISH, "iot/actuate/front-door")
    assert not allows("orion", AclAction.SUBSCRIBE, "agents/inbox/hub")
    assert allows("hub", AclAction.SUBSCRIBE, "iot/actuate/+")
    assert allows("hub", AclAction.PUBLISH, "iot/sensor/thermo")
    assert not allows("orion", AclAction.SUBSCRIBE, "agents/mirror")
    assert allows("supervisor", AclAction.SUBSCRIBE, "agents/mirror")
    assert allows("operator", AclAction.PUBLISH, "agents/inbox/orion")
    assert not allows("operator", AclAction.SUBSCRIBE, "agents/broadcast")
