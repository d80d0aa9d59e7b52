"""Command line entry point ``seesaw-balance``.

Exit codes: 0 success, 1 invalid input, 2 simulation or controller fault,
3 a scenario assertion failed.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .robot import ModelError, load_model
from .scenario import (ScenarioError, check_assertions, load_scenario, parse_scenario, rank_survey,
                       run_scenario, write_outputs)
from .seesaw import SeesawParams

EXIT_OK, EXIT_INVALID, EXIT_FAULT, EXIT_ASSERTION = 0, 1, 2, 3
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
CONTROLLER_FLAGS = ("robot-momentum", "mixed")

log = logging.getLogger("seesaw_balance")


def configure_logging():
    name = os.environ.get("SEESAW_LOG_LEVEL", "error").lower()
    level = LOG_LEVELS.get(name)
    logging.basicConfig(level=level or logging.ERROR, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    if level is None:
        log.warning("unknown SEESAW_LOG_LEVEL %r, using 'error'", name)


class _Parser(argparse.ArgumentParser):
    # usage errors are input errors; argparse would exit with 2, the fault code
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="seesaw-balance",
                     description="Humanoid balancing on a seesaw: batch simulation runs.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario and write log.csv, metrics.json, scenario-resolved.json")
    run.add_argument("scenario", help="scenario JSON file or bundled scenario name")
    run.add_argument("--out", help="output directory (default: scenario 'output' or ./out/<name>)")
    run.add_argument("--controller", choices=CONTROLLER_FLAGS)
    run.add_argument("--dt-physics", type=float)
    run.add_argument("--duration", type=float)
    run.add_argument("--seed", type=int)

    survey = sub.add_parser("rank-survey", help="rank statistics of the task matrices over random states")
    survey.add_argument("--samples", type=int, default=1000)
    survey.add_argument("--seed", type=int, default=0)
    survey.add_argument("--model", default="icub-reduced")
    survey.add_argument("--out", help="write the report to this JSON file instead of stdout")

    validate = sub.add_parser("validate", help="validate a scenario file and print the resolved form")
    validate.add_argument("scenario")
    return parser


def _with_overrides(path, args):
    """Scenario with command-line flags applied; flags win over file values."""
    scenario = load_scenario(path)
    raw = scenario.resolved()
    for flag, key in (("controller", "controller"), ("dt_physics", "dt_physics"),
                      ("duration", "duration"), ("seed", "seed"), ("out", "output")):
        value = getattr(args, flag)
        if value is not None:
            raw[key] = value
    base = Path(path).parent if Path(path).exists() else None
    return parse_scenario(raw, base), base


def cmd_run(args) -> int:
    scenario, base = _with_overrides(args.scenario, args)
    out = Path(scenario.output) if scenario.output else Path("out") / scenario.name
    if not scenario.output:
        scenario = scenario.model_copy(update={"output": str(out)})
    sim_log, metrics = run_scenario(scenario, base)
    write_outputs(sim_log, metrics, scenario, out)
    print(json.dumps({"output": str(out), "fault": metrics.fault,
                      "momentum_error_final": metrics.momentum_error_final,
                      "theta_abs_max": metrics.theta_abs_max, "com_rmse": metrics.com_rmse}))
    if metrics.fault:
        log.error(metrics.fault)
        return EXIT_FAULT
    failures = check_assertions(scenario, metrics)
    for msg in failures:
        log.error("assertion failed: %s", msg)
    return EXIT_ASSERTION if failures else EXIT_OK


def cmd_rank_survey(args) -> int:
    if args.samples <= 0:
        raise ScenarioError("--samples must be positive")
    report = rank_survey(load_model(args.model), SeesawParams(), args.samples, args.seed)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return EXIT_OK


def cmd_validate(args) -> int:
    scenario = load_scenario(args.scenario)
    print(json.dumps(scenario.resolved(), indent=2, sort_keys=True))
    return EXIT_OK


def main(argv=None) -> int:
    configure_logging()
    args = build_parser().parse_args(argv)
    handler = {"run": cmd_run, "rank-survey": cmd_rank_survey, "validate": cmd_validate}[args.command]
    try:
        return handler(args)
    except (ScenarioError, ModelError, FileNotFoundError, KeyError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
