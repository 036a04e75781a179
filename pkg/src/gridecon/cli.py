"""Command line interface: run scenarios, validate them, expand plans."""

from __future__ import annotations

import argparse
import json
import sys

from .scenario import (
    EXIT_PARSE,
    EXIT_VALIDATION,
    ScenarioParseError,
    run_scenario,
    validate_scenario,
)
from .sweep import PlanError, expand, parse_plan


def _cmd_run(args) -> int:
    code, summary = run_scenario(
        args.scenario, args.out, seed=args.seed, trace=args.trace,
        strategy=args.strategy,
    )
    if "error" in summary:
        print(json.dumps({"error": summary["error"],
                          "findings": summary.get("findings", [])}), file=sys.stderr)
    for s in summary.get("sessions", []):
        print(f"session {s['name']}: {s['jobs_done']}/{s['jobs_total']} done, "
              f"cost {s['total_cost']}, makespan {s['makespan']}, "
              f"deadline_met={s['deadline_met']}")
    if "conservation_ok" in summary:
        print(f"conservation_ok={summary['conservation_ok']} "
              f"events={summary['events']} -> {args.out}/")
    return code


def _cmd_validate(args) -> int:
    try:
        findings = validate_scenario(args.scenario)
    except ScenarioParseError as e:
        print(str(e), file=sys.stderr)
        return EXIT_PARSE
    for finding in findings:
        print(finding)
    if findings:
        return EXIT_VALIDATION
    print("ok")
    return 0


def _cmd_expand(args) -> int:
    try:
        with open(args.planfile, encoding="utf-8") as fh:
            plan = parse_plan(fh.read())
        jobset = expand(plan)
    except OSError as e:
        print(str(e), file=sys.stderr)
        return EXIT_PARSE
    except PlanError as e:
        print(str(e), file=sys.stderr)
        return EXIT_PARSE
    print("job,length_mi,output_mb,inputs")
    for job in jobset.jobs:
        print(f"{job.id},{job.length_mi!r},{job.output_mb!r},"
              f"{';'.join(job.input_files)}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="gridecon",
        description="Economy-driven utility-grid simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario and write reports")
    p_run.add_argument("scenario")
    p_run.add_argument("--seed", type=int, default=None,
                       help="override the scenario seed")
    p_run.add_argument("--out", default="out", help="output directory")
    p_run.add_argument("--trace", action="store_true",
                       help="also write the events.csv trace")
    p_run.add_argument("--strategy", choices=["cost", "time", "costtime"],
                       default=None, help="override every session's strategy")
    p_run.set_defaults(func=_cmd_run)

    p_val = sub.add_parser("validate", help="check a scenario without running it")
    p_val.add_argument("scenario")
    p_val.set_defaults(func=_cmd_validate)

    p_exp = sub.add_parser("expand", help="print a plan's job table")
    p_exp.add_argument("planfile")
    p_exp.set_defaults(func=_cmd_expand)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
