"""Batch command-line surface: simulate, validate, replay, score, urdf.

Reports go to stdout as canonical JSON, summaries and logs go to stderr.
"""
import argparse
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

from pydantic import ValidationError
import structlog
import yaml

from .config_manager import Config, get_config, load_config
from .conformance import validate_log
from .exceptions import (
    CodecError,
    HRIError,
    IdentifierError,
    LogIntegrityError,
    LogParseError,
    RangeError,
    ScenarioLoadError,
)
from .hri_codec import canonical_dumps
from .hri_kinematics import emit_urdf, generate_model
from .hri_model import is_identifier
from .logger import setup_logging
from .person_manager import replay_fusion
from .scenario_sim import GroundTruth, load_scenario, score, simulate, truth_path

logger = structlog.get_logger()

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INPUT = 2
EXIT_VIOLATIONS = 3

INPUT_ERRORS = (
    ScenarioLoadError,
    LogParseError,
    LogIntegrityError,
    CodecError,
    RangeError,
    IdentifierError,
    FileNotFoundError,
    IsADirectoryError,
    ValidationError,
    yaml.YAMLError,
)


class InputError(Exception):
    pass


def _emit(report: Any) -> None:
    sys.stdout.write(canonical_dumps(report) + "\n")
    sys.stdout.flush()


def _summary(args: argparse.Namespace, text: str) -> None:
    if not args.quiet:
        print(text, file=sys.stderr)


def _require_file(path: str) -> Path:
    candidate = Path(path)
    if not candidate.is_file():
        raise InputError(f"{path}: no such file")
    return candidate


def cmd_simulate(args: argparse.Namespace, config: Config) -> int:
    scenario = load_scenario(args.scenario)
    out = Path(args.out) if args.out else Path(f"{scenario.name}.hrilog")
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", encoding="utf-8", newline="\n") as sink:
        result = simulate(scenario, config, args.seed, sink)
    sidecar = result.truth.write(truth_path(out))
    report = {
        "scenario": scenario.name,
        "seed": result.truth.seed,
        "log": str(out),
        "truth": str(sidecar),
        "events": result.recorder.count,
        "persons": result.manager.snapshot(),
    }
    _emit(report)
    _summary(args, f"simulated {scenario.name}: {result.recorder.count} events -> {out}")
    return EXIT_OK


def cmd_validate(args: argparse.Namespace, config: Config) -> int:
    results = validate_log(_require_file(args.log))
    results["log"] = args.log
    _emit(results)
    if results["status"] != "pass":
        _summary(args, f"{args.log}: {len(results['violations'])} violation(s)")
        for violation in results["violations"]:
            _summary(args, f"  line {violation.get('line')}: [{violation['type']}] {violation['message']}")
        return EXIT_VIOLATIONS
    _summary(args, f"{args.log}: conformant ({results['events']} events)")
    return EXIT_OK


def cmd_replay(args: argparse.Namespace, config: Config) -> int:
    source = _require_file(args.log)
    if args.out is None:
        manager, recorder = replay_fusion(source, sys.stdout, args.seed)
        _summary(args, f"replayed {args.log}: {recorder.count} events")
        return EXIT_OK
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", encoding="utf-8", newline="\n") as sink:
        manager, recorder = replay_fusion(source, sink, args.seed)
    _emit({"log": str(out), "source": args.log, "events": recorder.count, "persons": manager.snapshot()})
    _summary(args, f"replayed {args.log}: {recorder.count} events -> {out}")
    return EXIT_OK


def cmd_score(args: argparse.Namespace, config: Config) -> int:
    log = _require_file(args.log)
    truth = GroundTruth.load(_require_file(args.truth) if args.truth else _require_file(str(truth_path(log))))
    report = score(truth, log)
    _emit(report)
    _summary(args, f"scored {truth.scenario}: {'passed' if report['passed'] else 'below threshold'}")
    for name, value in sorted(report["metrics"].items()):
        _summary(args, f"  {name}: {value}")
    return EXIT_OK


def cmd_urdf(args: argparse.Namespace, config: Config) -> int:
    if not is_identifier(args.body_id):
        raise IdentifierError(f"{args.body_id} is not an 8-character lowercase hex identifier")
    model = generate_model(args.body_id, args.height, min_height=config.kinematics.min_height,
                           max_height=config.kinematics.max_height)
    xml = emit_urdf(model)
    if args.out:
        Path(args.out).write_text(xml, encoding="utf-8")
        _summary(args, f"wrote URDF for body {args.body_id} -> {args.out}")
    else:
        sys.stdout.write(xml if xml.endswith("\n") else xml + "\n")
    return EXIT_OK


COMMANDS: Dict[str, Callable[[argparse.Namespace, Config], int]] = {
    "simulate": cmd_simulate,
    "validate": cmd_validate,
    "replay": cmd_replay,
    "score": cmd_score,
    "urdf": cmd_urdf,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Path to configuration file (default: $HRI_CONFIG or ./config.yaml)")
    common.add_argument("--out", help="Output path")
    common.add_argument("--quiet", action="store_true", help="Only warnings and errors on stderr")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="Override one config value, e.g. person_manager.gaze_cone_deg=20 (repeatable)")

    parser = argparse.ArgumentParser(prog="hri", description="Human-robot interaction middleware tools")
    commands = parser.add_subparsers(dest="command", required=True)

    simulate_parser = commands.add_parser("simulate", parents=[common], help="Run a scenario through fusion")
    simulate_parser.add_argument("scenario", help="Scenario JSON file")
    simulate_parser.add_argument("--seed", type=int, help="Override the scenario seed")

    validate_parser = commands.add_parser("validate", parents=[common], help="Check a log for protocol conformance")
    validate_parser.add_argument("log", help="Event log (.hrilog)")

    replay_parser = commands.add_parser("replay", parents=[common], help="Re-run fusion over a recorded log")
    replay_parser.add_argument("log", help="Event log (.hrilog)")
    replay_parser.add_argument("--seed", type=int, help="Override the seed recorded in the log header")

    score_parser = commands.add_parser("score", parents=[common], help="Score a log against its ground truth")
    score_parser.add_argument("log", help="Event log (.hrilog)")
    score_parser.add_argument("--truth", help="Ground-truth sidecar (default: next to the log)")

    urdf_parser = commands.add_parser("urdf", parents=[common], help="Emit the kinematic model of a body")
    urdf_parser.add_argument("height", type=float, help="Body height in meters")
    urdf_parser.add_argument("body_id", help="8-character body id")
    return parser


def _parse_overrides(pairs: List[str]) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {}
    for pair in pairs:
        key, separator, value = pair.partition("=")
        if not separator or "." not in key:
            raise InputError(f"--set expects SECTION.KEY=VALUE, got {pair!r}")
        overrides[key.strip()] = yaml.safe_load(value)
    return overrides


def _configure(args: argparse.Namespace) -> Config:
    config = load_config(args.config) if args.config else get_config()
    try:
        config = config.with_overrides(_parse_overrides(args.set))
    except KeyError as exc:
        raise InputError(exc.args[0]) from exc
    setup_logging(
        log_level="WARNING" if args.quiet else config.logging.level,
        log_to_file=config.logging.log_to_file,
        log_directory=config.logging.log_directory,
        max_log_size_mb=config.logging.max_log_size_mb,
        backup_count=config.logging.backup_count,
        structured=config.logging.structured_logging,
        force=True,
    )
    return config


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    try:
        if args.config and not Path(args.config).is_file():
            raise InputError(f"{args.config}: no such config file")
        config = _configure(args)
        logger.debug("command_started", command=args.command)
        return COMMANDS[args.command](args, config)
    except (InputError, *INPUT_ERRORS) as exc:
        logger.error("input_error", command=args.command, error=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except HRIError as exc:
        logger.error("command_failed", command=args.command, error=str(exc))
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:
        logger.exception("command_crashed", command=args.command)
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
