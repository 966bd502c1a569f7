"""Run reports, computed from an event log alone.

Everything a report needs that is not an event (failure cost, parameter
grids) travels in the ``scenario`` record at the head of the log, so a
stored log reproduces the run-time report exactly.
"""

from __future__ import annotations

import json
from collections import Counter
from typing import Iterable, Sequence

from .kernel import EventLog
from .overtake import DEMO_DECISION_MAP
from .testmethod import ParamGrid, count_failures, param_coverage, risk_report, statement_coverage

DETECTING = {"MissedPong", "DeadlineMiss", "ProbeOutOfBand", "WatchdogImplausible", "BothFailed",
             "VoteFailure", "VoteDissent", "Divergence"}


def meta(log: EventLog) -> dict:
    heads = log.of_kind("scenario")
    return dict(heads[0].payload) if heads else {}


def availability(log: EventLog) -> tuple[int, int]:
    demands = log.of_kind("demand")
    return sum(1 for r in demands if r.payload.get("met")), len(demands)


def verdict_counts(log: EventLog) -> dict[str, dict[str, int]]:
    counts: dict[str, Counter] = {}
    for r in log.of_kind("verdict"):
        counts.setdefault(r.payload["verdict"], Counter())[r.payload["cause"]] += 1
    return {kind: dict(sorted(c.items())) for kind, c in sorted(counts.items())}


def detection_latencies(log: EventLog) -> list[dict]:
    """Time from each crash to the first defect verdict naming the victim."""
    out = []
    verdicts = [r for r in log.of_kind("verdict")
                if r.payload.get("verdict") == "Defect" and r.payload.get("cause") in DETECTING]
    for fault in log.of_kind("fault"):
        if fault.payload.get("fault") != "Crash":
            continue
        target = fault.receiver
        hit = next((v for v in verdicts if v.time >= fault.time and v.receiver == target), None)
        out.append({"target": target, "at": fault.time,
                    "latency": None if hit is None else hit.time - fault.time})
    return out


def switchover_gaps(log: EventLog) -> list[dict]:
    return [{"from": r.payload["from"], "to": r.payload["to"], "at": r.time, "gap": r.payload["gap"]}
            for r in log.of_kind("switchover")]


def grids_from_meta(info: dict) -> list[tuple[str, ParamGrid]]:
    return [(cid, ParamGrid(name, lo, hi, k)) for cid, name, lo, hi, k in info.get("grids", [])]


def build_report(log: EventLog) -> dict:
    info = meta(log)
    met, total = availability(log)
    cost = float(info.get("failure_cost", 0.0))
    params = {}
    for cid, grid in grids_from_meta(info):
        params[f"{cid}.{grid.name}"] = param_coverage(log, [grid], subject=cid)[grid.name].to_dict()
    failures = count_failures(log)
    return {
        "name": info.get("name", ""),
        "seed": info.get("seed"),
        "guardian": info.get("guardian", False),
        "availability": met / total if total else 0.0,
        "demands": {"met": met, "total": total},
        "failures": failures,
        "verdicts": verdict_counts(log),
        "detection": detection_latencies(log),
        "switchovers": switchover_gaps(log),
        "coverage": statement_coverage(log, DEMO_DECISION_MAP).to_dict(),
        "param_coverage": params,
        "risk": risk_report(log, cost).to_dict(),
    }


def exit_code(reports: Iterable[dict]) -> int:
    return 2 if any(r.get("failures", 0) > 0 for r in reports) else 0


def campaign_summary(logs: Sequence[EventLog], reports: Sequence[dict], errors: dict[int, str]) -> dict:
    cost = float(meta(logs[0]).get("failure_cost", 0.0)) if logs else 0.0
    avail = [r["availability"] for r in reports]
    return {
        "runs": [{"seed": r["seed"], "availability": r["availability"], "failures": r["failures"],
                  "verdicts": r["verdicts"], "detection": r["detection"]} for r in reports],
        "errors": {str(seed): msg for seed, msg in sorted(errors.items())},
        "aggregate": {
            "runs": len(reports),
            "mean_availability": sum(avail) / len(avail) if avail else 0.0,
            "min_availability": min(avail) if avail else 0.0,
            "risk": risk_report(logs, cost).to_dict(),
            "coverage": statement_coverage(logs, DEMO_DECISION_MAP).to_dict(),
        },
    }


def to_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def render_table(report: dict) -> str:
    rows: list[tuple[str, str]] = []
    if "aggregate" in report:
        agg = report["aggregate"]
        rows += [("runs", _fmt(agg["runs"])), ("mean availability", _fmt(agg["mean_availability"])),
                 ("min availability", _fmt(agg["min_availability"])),
                 ("coverage", _fmt(agg["coverage"]["ratio"])), ("risk", _fmt(agg["risk"]["risk"]))]
        for run in report["runs"]:
            rows.append((f"seed {run['seed']}", f"availability {_fmt(run['availability'])}  "
                                                f"failures {run['failures']}"))
        for seed, msg in report["errors"].items():
            rows.append((f"seed {seed}", f"error: {msg}"))
    else:
        rows += [
            ("scenario", report["name"] or "-"),
            ("seed", _fmt(report["seed"])),
            ("guardian", "on" if report["guardian"] else "off"),
            ("availability", f"{_fmt(report['availability'])} "
                             f"({report['demands']['met']}/{report['demands']['total']})"),
            ("failures", _fmt(report["failures"])),
        ]
        for kind, causes in report["verdicts"].items():
            for cause, n in causes.items():
                rows.append((f"{kind} {cause}", str(n)))
        for d in report["detection"]:
            rows.append((f"crash {d['target']}@{d['at']}", "undetected" if d["latency"] is None
                         else f"detected after {d['latency']} ms"))
        for s in report["switchovers"]:
            rows.append((f"switchover {s['from']}->{s['to']}@{s['at']}", f"gap {s['gap']} ms"))
        cov = report["coverage"]
        rows.append(("coverage", f"{_fmt(cov['ratio'])} ({cov['executed']}/{cov['executable']})"))
        if cov["zero_hits"]:
            rows.append(("never hit", ", ".join(cov["zero_hits"])))
        for name, pc in report["param_coverage"].items():
            rows.append((f"param {name}", _fmt(pc["ratio"])))
        risk = report["risk"]
        rows.append(("risk", f"{_fmt(risk['risk'])} (rate {risk['rate']:.6g}/tick x cost {_fmt(risk['cost'])})"))
    width = max(len(k) for k, _ in rows)
    return "".join(f"{k.ljust(width)}  {v}\n" for k, v in rows)
