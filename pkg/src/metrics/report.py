"""Run results and their two renderings: rich tables for people, a JSON document for machines."""
import io
import json
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

from rich.box import ROUNDED
from rich.console import Console
from rich.table import Table

from attacks.injectors import ATTACK_LABELS, ATTACK_SURFACES, BUS_ATTACKS, AttackKind
from config import Config
from metrics.stats import PERCENTILE_METHOD
from sovereignty.egress import VisibilityLayer, coordination_anomalies, detect_crossings, egress_report

REPORT_WIDTH = 110
NO_DATA = "no data"


@dataclass
class RunResults:
    """Everything one experiment produced, already reduced to plain documents"""
    scenario: str
    seed: int
    posture: str
    latency: List[dict] = field(default_factory=list)
    burst: List[dict] = field(default_factory=list)
    adversarial: Dict[str, List[dict]] = field(default_factory=dict)
    provenance: Optional[dict] = None
    audit_gap: Optional[dict] = None
    sovereignty: Optional[dict] = None
    failover: List[dict] = field(default_factory=list)
    reconnect: Optional[dict] = None
    state: List[dict] = field(default_factory=list)
    invariants: List[str] = field(default_factory=list)

    def to_document(self) -> dict:
        return {
            "schema_version": Config.REPORT_SCHEMA_VERSION,
            "tool": {"name": Config.TOOL_NAME, "version": Config.TOOL_VERSION},
            "scenario": self.scenario,
            "seed": self.seed,
            "posture": self.posture,
            "percentile_method": PERCENTILE_METHOD,
            "sections": {
                "latency": self.latency,
                "burst": self.burst,
                "adversarial": {posture: self.adversarial[posture] for posture in sorted(self.adversarial)},
                "provenance": self.provenance,
                "audit_gap": self.audit_gap,
                "sovereignty": self.sovereignty,
                "failover": self.failover,
                "reconnect": self.reconnect,
                "state": self.state,
            },
            "invariant_violations": list(self.invariants),
        }

    @property
    def empty(self) -> bool:
        sections = self.to_document()["sections"]
        return not any(sections.values())


def sovereignty_section(world) -> dict:
    crossings = detect_crossings(world)
    section = egress_report(world).to_dict()
    section.update({
        "crossings": len(crossings),
        "markers": sum(1 for c in crossings if VisibilityLayer.AUDIT_MARKER in c.layers),
        "dns_only_crossings": sum(1 for c in crossings if c.dns_only),
        "coordination_anomalies": coordination_anomalies(crossings),
        "fallback_mode": world.boundary.cloud_fallback.value,
        "inference_failures": len(world.inference_failures),
    })
    return section


# --- Formatting ---

def _ms(us: Optional[float]) -> str:
    return "-" if us is None else f"{us / 1_000:.1f} ms"


def _s(seconds: Optional[float]) -> str:
    return "-" if seconds is None else f"{seconds:.3f} s"


def _pct(fraction: float) -> str:
    return f"{fraction * 100:.1f}%"


def _table(title: str, *columns: str) -> Table:
    table = Table(title=title, show_header=True, header_style="bold", box=ROUNDED)
    for index, column in enumerate(columns):
        table.add_column(column, justify="left" if index == 0 else "right")
    return table


def _probe_verdict(outcome: Optional[dict]) -> str:
    if outcome is None:
        return "not run"
    if outcome["accepted"]:
        return "Accepted"
    reasons = [v.split(":", 1)[1] for v in outcome["verdicts"] if v.startswith("rejected:")]
    return f"Rejected ({', '.join(reasons)})" if reasons else "Rejected"


def _finding(outcome: dict) -> str:
    evidence = outcome["evidence"]
    kind = AttackKind(outcome["kind"])
    if kind is AttackKind.EMBEDDED_STATE_DRIFT:
        return f"{evidence['divergent_copies']} copies, {evidence['conflicts']} conflicts ({evidence['state_mode']})"
    if kind is AttackKind.FORGED_FLOOD:
        return (f"lockout {_s(evidence['lockout_us'] / 1_000_000)}, "
                f"legitimate obeyed: {'yes' if evidence['legitimate_obeyed'] else 'no'}")
    if kind is AttackKind.INDUCED_FALLBACK:
        return (f"{evidence['egress_entries']} egress, {evidence['dns_events']} DNS, "
                f"{evidence['markers']} markers, {evidence['coordination_anomalies']} anomalies")
    if kind is AttackKind.PARTITION_BLACKOUT:
        return (f"blackout {_s(evidence['blackout_us'] / 1_000_000)}, "
                f"{evidence['unaudited_actuations']} unaudited")
    return f"actuated: {'yes' if evidence.get('bridge_actuated') else 'no'}"


def _by_kind(outcomes: List[dict]) -> Dict[str, dict]:
    return {outcome["kind"]: outcome for outcome in outcomes}


# --- Sections ---

def _latency(console: Console, rows: List[dict]) -> None:
    table = _table("Echo latency", "Target", "Payload", "N", "Mean", "Median", "P95", "P99", "Stddev", "Timeouts")
    for row in rows:
        stats = row["stats"] or {}
        table.add_row(row["target"], f"{row['payload_size']} B", str(stats.get("n", 0)),
                      _ms(stats.get("mean_us")), _ms(stats.get("median_us")), _ms(stats.get("p95_us")),
                      _ms(stats.get("p99_us")), _ms(stats.get("stddev_us")), str(row["timeouts"]))
    console.print(table)


def _burst(console: Console, rows: List[dict]) -> None:
    table = _table("Burst latency", "Target", "Probes", "Spacing", "Mean", "P99", "Degradation")
    for row in rows:
        stats = row["stats"] or {}
        table.add_row(row["target"], str(row["requested"]), _ms(row["spacing_us"]), _ms(stats.get("mean_us")),
                      _ms(stats.get("p99_us")), _ms(row["degradation_us"]))
    console.print(table)


def _adversarial(console: Console, by_posture: Dict[str, List[dict]]) -> None:
    baseline = _by_kind(by_posture.get("baseline", []))
    hardened = _by_kind(by_posture.get("hardened", []))
    table = _table("Adversarial probes", "Attack", "Baseline", "Hardened", "Bridge actuated")
    for kind in BUS_ATTACKS:
        base, hard = baseline.get(kind.value), hardened.get(kind.value)
        actuated = "/".join("-" if o is None else str(o["executions"]) for o in (base, hard))
        table.add_row(ATTACK_LABELS[kind], _probe_verdict(base), _probe_verdict(hard), actuated)
    console.print(table)

    extended = _table("Attack surfaces", "Attack", "Surface", "Posture", "Detections", "Executions", "Finding")
    for posture in sorted(by_posture):
        for outcome in by_posture[posture]:
            kind = AttackKind(outcome["kind"])
            if kind in BUS_ATTACKS:
                continue
            extended.add_row(ATTACK_LABELS[kind], ATTACK_SURFACES[kind], posture, str(outcome["detection_events"]),
                             str(outcome["executions"]), _finding(outcome))
    if extended.row_count:
        console.print(extended)


def _provenance(console: Console, audit: dict) -> None:
    title = f"Provenance coverage ({audit['n']} commands{', vacuous' if audit['vacuous'] else ''})"
    table = _table(title, "Field", "Coverage")
    for name, value in audit["coverage"].items():
        table.add_row(name, _pct(value))
    console.print(table)


def _audit_gap(console: Console, gap: dict) -> None:
    stats = gap["stats"]
    if stats is None:
        console.print(f"Actuation-to-audit gap: {NO_DATA} ({gap['unmatched']} unmatched)")
        return
    table = _table(f"Actuation-to-audit gap (mean {_ms(stats['mean_us'])}, p99 {_ms(stats['p99_us'])}, "
                   f"{gap['unmatched']} unmatched)", "Device kind", "Actuation", "Interceptable")
    for kind, device in gap["devices"].items():
        table.add_row(kind, _ms(device["actuation_duration_us"]), "yes" if device["interceptable"] else "no")
    console.print(table)


def _sovereignty(console: Console, section: dict) -> None:
    table = _table(f"Sovereignty boundary (fallback: {section['fallback_mode']})", "Metric", "Value")
    table.add_row("Operations", str(section["operations"]))
    table.add_row("External IPs", str(section["external_ips"]))
    table.add_row("Egress bytes", str(section["total_bytes"]))
    table.add_row("Egress entries", str(section["entries"]))
    table.add_row("DNS events", str(section["dns_events"]))
    table.add_row("Boundary markers", str(section["markers"]))
    table.add_row("DNS-only crossings", str(section["dns_only_crossings"]))
    table.add_row("Coordination anomalies", str(section["coordination_anomalies"]))
    for host, sent in section["per_destination"].items():
        table.add_row(f"  {host}", f"{sent} B")
    console.print(table)


def _failover(console: Console, rows: List[dict]) -> None:
    table = _table("Failover decomposition", "#", "Partition", "Recovery", "Bridge setup", "Reconnect", "Total",
                   "Unaudited")
    for index, row in enumerate(rows, 1):
        table.add_row(str(index), _s(row["partition_s"]), _s(row["network_recovery_s"]), _s(row["bridge_setup_s"]),
                      f"{row['reconnect_ms']:.1f} ms", _s(row["total_blackout_s"]), str(row["unaudited_actuations"]))
    console.print(table)


def _reconnect(console: Console, section: dict) -> None:
    stats = section["stats"]
    table = _table(f"Reconnect in isolation (n={stats['n']}, mean {_ms(stats['mean_us'])}, "
                   f"p99 {_ms(stats['p99_us'])})", "Block duration", "Mean reconnect")
    for block, mean in section["per_block_mean_us"].items():
        table.add_row(_ms(int(block)), _ms(mean))
    console.print(table)


def _state(console: Console, rows: List[dict]) -> None:
    table = _table("Shared state", "Document", "Mode", "Divergent copies", "Conflicts")
    for row in rows:
        table.add_row(row["doc"], row["state_mode"], str(row["divergent_copies"]), str(row["conflicts"]))
    console.print(table)


SECTIONS = (
    ("latency", "Echo latency", _latency),
    ("burst", "Burst latency", _burst),
    ("adversarial", "Adversarial probes", _adversarial),
    ("provenance", "Provenance coverage", _provenance),
    ("audit_gap", "Actuation-to-audit gap", _audit_gap),
    ("sovereignty", "Sovereignty boundary", _sovereignty),
    ("failover", "Failover decomposition", _failover),
    ("reconnect", "Reconnect in isolation", _reconnect),
    ("state", "Shared state", _state),
)


@dataclass(frozen=True)
class RenderedReport:
    text: str
    machine: str


def render_text(document: Dict[str, Any]) -> str:
    buffer = io.StringIO()
    console = Console(file=buffer, width=REPORT_WIDTH, no_color=True, color_system=None, force_terminal=False,
                      highlight=False, emoji=False)
    console.rule(f"{Config.TOOL_NAME} report: {document['scenario']}")
    console.print(f"seed {document['seed']}, posture {document['posture']}, "
                  f"percentiles {document['percentile_method']}")
    for key, title, render in SECTIONS:
        section = document["sections"].get(key)
        if section:
            render(console, section)
        else:
            console.print(f"{title}: {NO_DATA}")
    violations = document.get("invariant_violations") or []
    if violations:
        console.print("Invariant violations:")
        for violation in violations:
            console.print(f"  - {violation}")
    else:
        console.print("Invariants: all hold")
    return buffer.getvalue()


def render_machine(document: Dict[str, Any]) -> str:
    return json.dumps(document, sort_keys=True, indent=2) + "\n"


def render_report(results: RunResults) -> RenderedReport:
    document = results.to_document()
    return RenderedReport(text=render_text(document), machine=render_machine(document))
