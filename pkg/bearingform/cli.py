import argparse
import asyncio
import json
import logging
from pathlib import Path
from typing import List, Optional

from bearingform import __version__
from bearingform.exceptions import ConfigurationError, ScenarioError, SimulationAbort, exit_code_for
from bearingform.harness import RunResult, analyze_trace, run, run_many, validate_scenario, write_outputs
from bearingform.scenario import Scenario, builtin, builtin_scenarios, load_scenario

log = logging.getLogger(__file__)


def _common(parser: argparse.ArgumentParser):
    parser.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    parser.add_argument("--seed", type=int, help="override the noise seed")
    parser.add_argument("--dt", type=float, help="override the integration step (s)")
    parser.add_argument("--duration", type=float, help="override the run duration (s)")
    parser.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bearingform",
        description="Bearing-only localization and formation tracking simulator",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario file")
    p.add_argument("scenario", type=Path)
    _common(p)

    p = sub.add_parser("paper", help="run built-in experiments")
    p.add_argument("names", nargs="+", metavar="name")
    p.add_argument("--parallel", type=int, default=None, help="maximum concurrent runs")
    _common(p)

    p = sub.add_parser("analyze", help="analyze a written trace")
    p.add_argument("trace", type=Path)
    p.add_argument("--bpe", action="store_true", help="check bearing persistent excitation")
    p.add_argument("--window", type=float, default=1.0, help="PE window T (s)")
    p.add_argument("--threshold", type=float, default=1e-3)
    p.add_argument("--scenario", type=Path, help="scenario file describing the formation")
    _common(p)

    p = sub.add_parser("validate", help="validate a scenario file without running it")
    p.add_argument("scenario", type=Path)
    _common(p)

    p = sub.add_parser("list", help="list built-in experiments")
    _common(p)
    return parser


def configure_logging(level: str):
    logging.basicConfig(
        level=getattr(logging, level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def _override(sc: Scenario, args) -> Scenario:
    return sc.with_overrides(seed=args.seed, dt=args.dt, duration=args.duration)


def _summary(result: RunResult) -> dict:
    m = result.metrics
    return {
        "scenario": m["scenario"],
        "final": m["final"],
        "min_dist": m["min_dist"],
        "bpe": m["bpe"],
        "abort": m["abort"],
    }


def _finish(results: List[RunResult], out_dirs: List[Path]) -> int:
    for result, out in zip(results, out_dirs):
        write_outputs(result, out)
        print(json.dumps(_summary(result)))
    return 2 if any(r.aborted for r in results) else 0


def cmd_run(args) -> int:
    sc = _override(load_scenario(args.scenario), args)
    return _finish([run(sc)], [args.out])


def cmd_paper(args) -> int:
    scenarios = [_override(builtin(name), args) for name in args.names]
    if len(scenarios) == 1:
        return _finish([run(scenarios[0])], [args.out])
    results = asyncio.run(run_many(scenarios, args.parallel))
    return _finish(results, [args.out / sc.name for sc in scenarios])


def cmd_analyze(args) -> int:
    if not args.bpe:
        raise ConfigurationError("nothing to analyze, pass --bpe")
    report, g = analyze_trace(args.trace, args.window, args.threshold, args.scenario)
    print(json.dumps(report.to_dict(g), indent=2))
    return 0


def cmd_validate(args) -> int:
    sc = _override(load_scenario(args.scenario), args)
    checks = validate_scenario(sc)
    print(json.dumps({"scenario": sc.name, "valid": True, **checks.to_dict()}, indent=2))
    return 0


def cmd_list(args) -> int:
    for name, sc in builtin_scenarios().items():
        print(f"{name}\t{sc.mode}\t{sc.duration}s")
    return 0


commands = {
    "run": cmd_run,
    "paper": cmd_paper,
    "analyze": cmd_analyze,
    "validate": cmd_validate,
    "list": cmd_list,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        return commands[args.command](args)
    except (ScenarioError, SimulationAbort) as e:
        log.error(str(e))
        return exit_code_for(e)
