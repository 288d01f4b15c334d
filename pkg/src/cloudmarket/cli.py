"""Command-line entry point: ``cloudmarket run | validate | batch``."""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .report import FORMATS, SimReport, emit_report
from .scenario import ScenarioError, load_scenario
from .simulation import run_all
from .workload import Strategy

EXIT_OK = 0
EXIT_DEADLINE_MISSED = 1
EXIT_SCENARIO_ERROR = 2


def _exit_code(reports: list[SimReport]) -> int:
    return EXIT_OK if all(r.deadline_met for r in reports) else EXIT_DEADLINE_MISSED


def _cmd_run(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except ScenarioError as exc:
        print(f"error: {args.scenario}: {exc}", file=sys.stderr)
        return EXIT_SCENARIO_ERROR
    strategy = Strategy(args.strategy) if args.strategy else None
    reports = [r.report for r in run_all(scenario, args.seed, strategy)]
    if args.out:
        with open(args.out, "w", newline="") as sink:
            emit_report(reports, args.format, sink)
    else:
        emit_report(reports, args.format, sys.stdout)
    return _exit_code(reports)


def _cmd_validate(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except ScenarioError as exc:
        print(f"error: {args.scenario}: {exc}", file=sys.stderr)
        return EXIT_SCENARIO_ERROR
    kind = type(scenario.workload).__name__.removesuffix("Spec").lower() if scenario.workload else "none"
    print(f"ok: {scenario.name} ({len(scenario.resources)} resources, "
          f"{len(scenario.catalog)} instance types, workload {kind})")
    return EXIT_OK


def _batch_one(path: str) -> tuple[str, list[SimReport] | None, str]:
    try:
        scenario = load_scenario(path)
    except ScenarioError as exc:
        return path, None, str(exc)
    return path, [r.report for r in run_all(scenario)], ""


def _cmd_batch(args) -> int:
    src = Path(args.dir)
    if not src.is_dir():
        print(f"error: {src} is not a directory", file=sys.stderr)
        return EXIT_SCENARIO_ERROR
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = sorted(str(p) for p in src.glob("*.json") if p.name != "schema.json")
    # one event loop per worker process; results are joined before aggregation
    with ProcessPoolExecutor(max_workers=args.jobs) as pool:
        results = list(pool.map(_batch_one, paths))
    code = EXIT_OK
    everything: list[SimReport] = []
    for path, reports, err in results:
        if reports is None:
            print(f"error: {path}: {err}", file=sys.stderr)
            code = EXIT_SCENARIO_ERROR
            continue
        stem = Path(path).stem
        with open(out / f"{stem}.json", "w") as sink:
            emit_report(reports, "json", sink)
        everything += reports
        print(f"{stem}: {len(reports)} report(s)")
        if code == EXIT_OK:
            code = _exit_code(reports)
    if everything:
        with open(out / "summary.csv", "w", newline="") as sink:
            emit_report(everything, "csv", sink)
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cloudmarket", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one scenario and print its report")
    p.add_argument("scenario")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--strategy", choices=[s.value for s in Strategy])
    p.add_argument("--format", choices=FORMATS, default="table")
    p.add_argument("--out", help="write the report here instead of stdout")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("validate", help="check a scenario file without running it")
    p.add_argument("scenario")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("batch", help="run every scenario in a directory")
    p.add_argument("dir")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=None, help="worker processes (default: CPU count)")
    p.set_defaults(func=_cmd_batch)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
