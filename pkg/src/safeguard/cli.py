"""Command line entry point.

    safeguard run      --scenario FILE --out DIR [--seed N] [--guardian on|off]
    safeguard campaign --scenario FILE --seeds 1-20 --out DIR [--guardian on|off]
    safeguard report   LOG [--out DIR]

Exit status is 0 for a clean run, 2 if any run logged a Failure verdict
and 1 for usage, schema or log errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .kernel import CorruptLog, EventLog
from .report import build_report, campaign_summary, exit_code, render_table, to_json
from .scenario import Scenario, ScenarioError, build, load_scenario

EXIT_OK, EXIT_USAGE, EXIT_FAILURE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def parse_seeds(text: str) -> list[int]:
    seeds: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        lo, sep, hi = part.partition("-")
        if sep:
            a, b = int(lo), int(hi)
            if a > b:
                raise ValueError(f"empty seed range {part}")
            seeds.extend(range(a, b + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise ValueError("no seeds given")
    return seeds


def _seeds_arg(text: str) -> list[int]:
    try:
        return parse_seeds(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _guardian_arg(value: str | None) -> bool | None:
    return None if value is None else value == "on"


def simulate(scn: Scenario, seed: int | None = None, guardian: bool | None = None) -> EventLog:
    return build(scn, seed=seed, guardian=guardian).run()


def write_run(log: EventLog, report: dict, out: Path, figures: bool = True) -> None:
    out.mkdir(parents=True, exist_ok=True)
    log.write(out / "events.jsonl")
    (out / "report.json").write_text(to_json(report), encoding="utf-8")
    (out / "report.txt").write_text(render_table(report), encoding="utf-8")
    if figures:
        from .plotting import plot_coverage, plot_timeline
        plot_timeline(log, out / "timeline.png")
        plot_coverage(report, out / "coverage.png")


def _emit(report: dict, fmt: str) -> None:
    sys.stdout.write(to_json(report) if fmt == "json" else render_table(report))


def cmd_run(args) -> int:
    scn = load_scenario(args.scenario)
    log = simulate(scn, args.seed, _guardian_arg(args.guardian))
    report = build_report(log)
    write_run(log, report, Path(args.out), not args.no_figures)
    _emit(report, args.format)
    return exit_code([report])


def cmd_campaign(args) -> int:
    scn = load_scenario(args.scenario)
    out = Path(args.out)
    guardian = _guardian_arg(args.guardian)
    logs, reports, errors = [], [], {}
    for seed in args.seeds:
        try:
            log = simulate(scn, seed, guardian)
        except Exception as exc:  # one bad seed must not sink the campaign
            errors[seed] = f"{type(exc).__name__}: {exc}"
            continue
        report = build_report(log)
        write_run(log, report, out / f"seed-{seed}", figures=False)
        logs.append(log)
        reports.append(report)
    summary = campaign_summary(logs, reports, errors)
    out.mkdir(parents=True, exist_ok=True)
    (out / "campaign.json").write_text(to_json(summary), encoding="utf-8")
    (out / "campaign.txt").write_text(render_table(summary), encoding="utf-8")
    if not args.no_figures:
        from .plotting import plot_campaign
        plot_campaign(summary, out / "campaign.png")
    _emit(summary, args.format)
    code = exit_code(reports)
    if code == EXIT_OK and errors:
        return EXIT_USAGE
    return code


def cmd_report(args) -> int:
    try:
        log = EventLog.read(args.log)
    except OSError as exc:
        print(f"{args.log}: {exc.strerror}", file=sys.stderr)
        return EXIT_USAGE
    report = build_report(log)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(to_json(report), encoding="utf-8")
        (out / "report.txt").write_text(render_table(report), encoding="utf-8")
    _emit(report, args.format)
    return exit_code([report])


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="safeguard", description="Supervised adaptive components in a discrete-event simulator.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, scenario=True):
        if scenario:
            p.add_argument("--scenario", required=True, help="scenario YAML file")
            p.add_argument("--guardian", choices=("on", "off"), help="override the scenario's guardian")
            p.add_argument("--no-figures", action="store_true", help="skip the PNG figures")
        p.add_argument("--format", choices=("json", "table"), default="table", help="stdout format")

    p = sub.add_parser("run", help="simulate one scenario")
    common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("campaign", help="simulate one scenario for several seeds")
    common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seeds", required=True, type=_seeds_arg, help="e.g. 1,2,5 or 1-20")
    p.set_defaults(fn=cmd_campaign)

    p = sub.add_parser("report", help="recompute the reports of a stored event log")
    common(p, scenario=False)
    p.add_argument("log", help="events.jsonl written by run")
    p.add_argument("--out", help="also write report.json/report.txt here")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ScenarioError as exc:
        for line in exc.lines():
            print(line, file=sys.stderr)
        return EXIT_USAGE
    except CorruptLog as exc:
        print(f"{args.log}: corrupt log at line {exc.line}: {exc.reason}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
