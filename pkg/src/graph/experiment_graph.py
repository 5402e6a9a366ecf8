import logging
from typing import Any, Dict, List, Optional

from langgraph.graph import END, START, StateGraph
from typing_extensions import TypedDict

from agents.orchestrator_agent import run_burst_benchmark, run_echo_benchmark
from attacks.injectors import AttackKind, run_attack, run_suite
from metrics.failover import world_failovers
from metrics.provenance import provenance_audit, world_audit_gap
from metrics.report import RunResults, sovereignty_section
from metrics.stats import summarize
from models.scenario import ScenarioConfig, WorkloadConfig
from sim.world import World, reconnect_benchmark
from tools.validation_tools import ConfigIssue, validate

logger = logging.getLogger(__name__)

# Experiment stages in execution order
STAGES = ("workload", "latency", "failover", "attacks", "egress")


class ExperimentState(TypedDict, total=False):
    document: Dict[str, Any]
    base_dir: Optional[str]
    seed: Optional[int]
    posture: Optional[str]
    requested: List[str]
    attack_postures: List[str]
    issues: List[ConfigIssue]
    config: ScenarioConfig
    world: World
    stages: List[str]
    done: List[str]
    results: RunResults


def applicable_stages(config: ScenarioConfig) -> List[str]:
    """Stages this scenario declares something for"""
    workload = config.workload
    stages = []
    if any((workload.commands, workload.sensor_reads, workload.status_publishes, workload.inference_calls,
            config.partitions)):
        stages.append("workload")
    if config.latency is not None:
        stages.append("latency")
    if config.partitions or config.reconnect_bench:
        stages.append("failover")
    if config.attack_suite or config.attacks:
        stages.append("attacks")
    if "workload" in stages:
        stages.append("egress")
    return stages


def isolated_config(config: ScenarioConfig) -> ScenarioConfig:
    """The same swarm with no workload and no scheduled partitions, for benchmarks"""
    return config.model_copy(update={"workload": WorkloadConfig(), "partitions": []})


def _stats_or_none(samples: List[int]) -> Optional[dict]:
    return summarize(samples).to_dict() if samples else None


class ExperimentGraph:
    """validate -> build -> [workload, latency, failover, attacks, egress] -> report"""

    def __init__(self):
        self.graph = self.build_graph()

    def build_graph(self):
        workflow = StateGraph(ExperimentState)

        workflow.add_node("validate", self._validate_node)
        workflow.add_node("build", self._build_node)
        workflow.add_node("workload", self._workload_node)
        workflow.add_node("latency", self._latency_node)
        workflow.add_node("failover", self._failover_node)
        workflow.add_node("attacks", self._attacks_node)
        workflow.add_node("egress", self._egress_node)
        workflow.add_node("report", self._report_node)

        workflow.add_edge(START, "validate")
        workflow.add_conditional_edges("validate", self._route_after_validate, {"build": "build", "end": END})

        routes = {stage: stage for stage in STAGES}
        routes["report"] = "report"
        for node in ("build",) + STAGES:
            workflow.add_conditional_edges(node, self._route_next_stage, routes)

        workflow.add_edge("report", END)
        return workflow.compile()

    # --- Routing ---

    def _route_after_validate(self, state: ExperimentState) -> str:
        return "end" if state.get("issues") else "build"

    def _route_next_stage(self, state: ExperimentState) -> str:
        done = state.get("done", [])
        for stage in state["stages"]:
            if stage not in done:
                return stage
        return "report"

    # --- Nodes ---

    def _validate_node(self, state: ExperimentState) -> dict:
        issues = validate(state["document"], state.get("base_dir"))
        for issue in issues:
            logger.warning("config issue at %s", issue)
        return {"issues": issues}

    def _build_node(self, state: ExperimentState) -> dict:
        config = ScenarioConfig.model_validate(state["document"]).with_overrides(
            seed=state.get("seed"), posture=state.get("posture"))
        world = World(config, state.get("base_dir"))
        applicable = applicable_stages(config)
        requested = state.get("requested") or list(STAGES)
        stages = [stage for stage in STAGES if stage in applicable and stage in requested]
        logger.info("scenario %s (seed %d, %s): stages %s", config.name, config.seed, config.posture,
                    ", ".join(stages) or "none")
        results = RunResults(scenario=config.name, seed=config.seed, posture=config.posture)
        return {"config": config, "world": world, "stages": stages, "done": [], "results": results}

    def _workload_node(self, state: ExperimentState) -> dict:
        world, results = state["world"], state["results"]
        world.run()
        results.provenance = provenance_audit(world.mirror_log, len(world.command_log)).to_dict()
        results.audit_gap = world_audit_gap(world).to_dict() if world.command_log else None
        results.invariants.extend(world.check_invariants())
        return {"done": state["done"] + ["workload"]}

    def _latency_node(self, state: ExperimentState) -> dict:
        config, results = state["config"], state["results"]
        latency = config.latency
        world = World(isolated_config(config), state.get("base_dir"))
        world.start()
        for size in latency.payload_sizes:
            echo = run_echo_benchmark(world.orchestrator, latency.target, size, latency.n, world,
                                      timeout_us=latency.timeout_us)
            results.latency.append({"target": echo.target, "payload_size": size, "requested": echo.requested,
                                    "timeouts": echo.timeouts, "stats": _stats_or_none(echo.samples)})
        if latency.burst_n:
            burst_world = World(isolated_config(config), state.get("base_dir"))
            burst_world.start()
            burst = run_burst_benchmark(burst_world.orchestrator, latency.burst_target or latency.target, burst_world,
                                        payload_size=latency.burst_payload, n=latency.burst_n,
                                        spacing_us=latency.burst_spacing_us, timeout_us=latency.timeout_us)
            results.burst.append({"target": burst.target, "requested": burst.requested, "timeouts": burst.timeouts,
                                  "spacing_us": burst.spacing_us, "degradation_us": round(burst.degradation_us, 3),
                                  "stats": _stats_or_none(burst.samples)})
        return {"done": state["done"] + ["latency"]}

    def _failover_node(self, state: ExperimentState) -> dict:
        config, world, results = state["config"], state["world"], state["results"]
        results.failover = [d.to_dict() for d in world_failovers(world)]
        bench = config.reconnect_bench
        if bench is not None:
            isolated = World(isolated_config(config), state.get("base_dir"))
            measured = reconnect_benchmark(isolated, bench.agent, bench.n, bench.block_durations_us)
            results.reconnect = {
                "stats": summarize(measured["delays"]).to_dict(),
                "per_block_mean_us": {str(block): round(sum(delays) / len(delays), 3)
                                      for block, delays in sorted(measured["per_block"].items())},
            }
        return {"done": state["done"] + ["failover"]}

    def _attacks_node(self, state: ExperimentState) -> dict:
        config, results = state["config"], state["results"]
        if config.attack_suite:
            for posture in state.get("attack_postures") or [config.posture]:
                outcomes = run_suite(posture, World(config, state.get("base_dir")))
                results.adversarial[posture] = [o.to_dict() for o in outcomes]
        else:
            outcomes = []
            for attack in config.attacks:
                world = World(config, state.get("base_dir"))
                outcome = run_attack(attack.kind, attack.params, world)
                results.invariants.extend(f"{attack.kind}: {v}" for v in world.check_invariants())
                outcomes.append(outcome)
            results.adversarial[config.posture] = [o.to_dict() for o in outcomes]
        for posture, outcomes in sorted(results.adversarial.items()):
            for outcome in outcomes:
                if outcome["kind"] == AttackKind.EMBEDDED_STATE_DRIFT.value:
                    evidence = outcome["evidence"]
                    results.state.append({"doc": evidence["doc"], "posture": posture, "state_mode": evidence["state_mode"],
                                          "divergent_copies": evidence["divergent_copies"],
                                          "conflicts": evidence["conflicts"]})
        return {"done": state["done"] + ["attacks"]}

    def _egress_node(self, state: ExperimentState) -> dict:
        state["results"].sovereignty = sovereignty_section(state["world"])
        return {"done": state["done"] + ["egress"]}

    def _report_node(self, state: ExperimentState) -> dict:
        results = state["results"]
        logger.info("experiment %s finished: %d invariant violations", results.scenario, len(results.invariants))
        return {"results": results}

    # --- Entry point ---

    def run(self, document: Dict[str, Any], base_dir: Optional[str] = None, seed: Optional[int] = None,
            posture: Optional[str] = None, requested: Optional[List[str]] = None,
            attack_postures: Optional[List[str]] = None) -> ExperimentState:
        return self.graph.invoke({
            "document": document,
            "base_dir": base_dir,
            "seed": seed,
            "posture": posture,
            "requested": requested or list(STAGES),
            "attack_postures": attack_postures or [],
        })
