import argparse
import json
import logging
import os
import sys
from datetime import datetime, timezone
from typing import List, Optional

from dotenv import load_dotenv

# Add the src directory to the Python path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

# Load environment variables
load_dotenv()

from rich.console import Console
from rich.logging import RichHandler

from config import Config
from graph.experiment_graph import ExperimentGraph
from metrics.report import render_report
from models.scenario import RunManifest, load_scenario_document
from sim.world import InvariantViolation
from tools.validation_tools import ConfigIssue, validate
from utils.console import ConsoleUI

logger = logging.getLogger("swarmsec")

# Stages each subcommand asks the experiment graph for
SUBCOMMAND_STAGES = {
    "run": None,
    "attack-suite": ["attacks"],
    "latency-bench": ["latency"],
    "failover-bench": ["workload", "failover"],
    "egress-audit": ["workload", "egress"],
}


def configure_logging(level: Optional[str] = None) -> None:
    logging.basicConfig(
        level=(level or os.getenv(Config.LOG_LEVEL_ENV, "WARNING")).upper(),
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=Console(stderr=True), rich_tracebacks=True, show_path=False)],
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=Config.TOOL_NAME,
                                     description="Deterministic edge agent swarm simulator and security harness")
    commands = parser.add_subparsers(dest="command", required=True)

    validate_cmd = commands.add_parser("validate", help="Check a scenario file (or every scenario in a directory)")
    validate_cmd.add_argument("--config", default=Config.SCENARIO_DIR,
                              help="Scenario JSON file or directory (default: the shipped scenarios)")
    validate_cmd.add_argument("--format", choices=("table", "machine"), default="table")

    for name, help_text in (
        ("run", "Run every experiment the scenario declares"),
        ("attack-suite", "Run all eight scripted attacks"),
        ("latency-bench", "Run the echo and burst latency benchmarks"),
        ("failover-bench", "Run the scenario's partitions and decompose the blackout"),
        ("egress-audit", "Run the workload and audit sovereignty boundary crossings"),
    ):
        cmd = commands.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, help="Scenario JSON file")
        cmd.add_argument("--seed", type=int, default=None, help="Override the scenario seed")
        cmd.add_argument("--posture", choices=("baseline", "hardened"), default=None,
                         help="Override the broker posture")
        cmd.add_argument("--out", default=None, help="Output directory")
        cmd.add_argument("--format", choices=("table", "machine"), default="table")

    report_cmd = commands.add_parser("report", help="Replay a finished run, check it against its trace and print its report")
    report_cmd.add_argument("--out", required=True, help="Output directory of a previous run")
    report_cmd.add_argument("--format", choices=("table", "machine"), default="table")
    return parser


class ExperimentRunner:
    def __init__(self, ui: Optional[ConsoleUI] = None):
        self.ui = ui or ConsoleUI()
        self.graph = ExperimentGraph()

    # --- validate ---

    def validate(self, path: str, output_format: str) -> int:
        paths = [path]
        if os.path.isdir(path):
            paths = [os.path.join(path, name) for name in sorted(os.listdir(path)) if name.endswith(".json")]
        report = {}
        for scenario_path in paths:
            issues = self._load_and_validate(scenario_path)[1]
            report[scenario_path] = [str(issue) for issue in issues]
            if output_format == "table":
                if issues:
                    self.ui.issues_table(issues, title=scenario_path)
                else:
                    self.ui.success(f"{scenario_path}: valid")
        if output_format == "machine":
            print(json.dumps(report, sort_keys=True, indent=2))
        return Config.EXIT_VALIDATION if any(report.values()) else Config.EXIT_OK

    def _load_and_validate(self, path: str):
        try:
            document = load_scenario_document(path)
        except FileNotFoundError:
            return None, [ConfigIssue("<file>", f"no such file {path!r}")]
        except json.JSONDecodeError as exc:
            return None, [ConfigIssue(f"<line {exc.lineno}>", f"invalid JSON: {exc.msg}")]
        if not isinstance(document, dict):
            return None, [ConfigIssue("<root>", "scenario must be a JSON object")]
        return document, validate(document, base_dir=os.path.dirname(os.path.abspath(path)))

    # --- experiments ---

    def _execute(self, command: str, document: dict, base_dir: str, seed: Optional[int],
                 posture: Optional[str]):
        attack_postures = None
        if command == "attack-suite":
            document = dict(document, attack_suite=True)
            attack_postures = [posture] if posture else ["baseline", "hardened"]
        state = self.graph.run(document, base_dir=base_dir, seed=seed, posture=posture,
                               requested=SUBCOMMAND_STAGES[command], attack_postures=attack_postures)
        return state["config"], state["world"], state["results"]

    def experiment(self, command: str, args: argparse.Namespace) -> int:
        document, issues = self._load_and_validate(args.config)
        if issues:
            self.ui.issues_table(issues, title=args.config)
            return Config.EXIT_VALIDATION
        base_dir = os.path.dirname(os.path.abspath(args.config))
        config, world, results = self._execute(command, document, base_dir, args.seed, args.posture)

        out_dir = args.out or os.path.join(os.getenv(Config.OUT_DIR_ENV, Config.DEFAULT_OUT_DIR), config.name)
        artifacts = world.export(out_dir)
        rendered = render_report(results)
        artifacts["scenario"] = "scenario.json"
        artifacts["report_text"] = "report.txt"
        artifacts["report"] = "report.json"
        with open(os.path.join(out_dir, artifacts["scenario"]), "w") as fh:
            fh.write(json.dumps(document, sort_keys=True, indent=2) + "\n")
        with open(os.path.join(out_dir, artifacts["report_text"]), "w") as fh:
            fh.write(rendered.text)
        with open(os.path.join(out_dir, artifacts["report"]), "w") as fh:
            fh.write(rendered.machine)
        manifest = RunManifest(
            scenario=config.name,
            config_digest=config.digest(),
            seed=config.seed,
            posture=config.posture,
            command=command,
            posture_override=args.posture,
            base_dir=base_dir,
            artifacts=artifacts,
            created_at=datetime.now(timezone.utc).isoformat(),
        )
        with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
            fh.write(manifest.model_dump_json(indent=2) + "\n")

        self._emit(rendered.text, rendered.machine, args.format)
        if args.format == "table":
            self.ui.key_value_table(artifacts, title=f"Artifacts in {out_dir}")
        if results.empty:
            self.ui.warn(f"{config.name}: the scenario declares nothing for {command} to measure")
        if results.invariants:
            raise InvariantViolation(results.invariants)
        logger.info("artifacts written to %s", out_dir)
        return Config.EXIT_OK

    def report(self, out_dir: str, output_format: str) -> int:
        """Rebuild a finished run's results by replaying its scenario and checking the replay against its trace"""
        try:
            with open(os.path.join(out_dir, "manifest.json"), "r") as fh:
                manifest = RunManifest.model_validate_json(fh.read())
            with open(os.path.join(out_dir, manifest.artifacts["scenario"]), "r") as fh:
                document = json.load(fh)
            with open(os.path.join(out_dir, manifest.artifacts["trace"]), "rb") as fh:
                recorded = fh.read()
        except (OSError, KeyError, ValueError) as exc:
            self.ui.error(f"cannot load the run in {out_dir}: {exc}")
            return Config.EXIT_VALIDATION

        if manifest.command not in SUBCOMMAND_STAGES or not isinstance(document, dict):
            self.ui.error(f"{out_dir}: the manifest does not describe a replayable run")
            return Config.EXIT_VALIDATION
        issues = validate(document, base_dir=manifest.base_dir)
        if issues:
            self.ui.issues_table(issues, title=os.path.join(out_dir, manifest.artifacts["scenario"]))
            return Config.EXIT_VALIDATION
        config, world, results = self._execute(manifest.command, document, manifest.base_dir,
                                               manifest.seed, manifest.posture_override)
        if config.digest() != manifest.config_digest:
            self.ui.error(f"{out_dir}: scenario.json does not match the manifest's config digest")
            return Config.EXIT_VALIDATION
        replayed = b"".join(line + b"\n" for line in world.sim.trace_lines())
        if replayed != recorded:
            self.ui.error(f"{out_dir}: the recorded trace does not reproduce from its scenario and seed")
            return Config.EXIT_VALIDATION

        rendered = render_report(results)
        self._emit(rendered.text, rendered.machine, output_format)
        return Config.EXIT_INVARIANT if results.invariants else Config.EXIT_OK

    def _emit(self, text: str, machine: str, output_format: str) -> None:
        if output_format == "machine":
            sys.stdout.write(machine)
        else:
            self.ui.plain(text)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging()
    runner = ExperimentRunner()
    try:
        if args.command == "validate":
            return runner.validate(args.config, args.format)
        if args.command == "report":
            return runner.report(args.out, args.format)
        return runner.experiment(args.command, args)
    except InvariantViolation as exc:
        runner.ui.error("Invariant violation:")
        for violation in exc.violations:
            runner.ui.error(f"  - {violation}")
        return Config.EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
