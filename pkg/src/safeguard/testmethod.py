"""Validation methodology for adaptive components.

Three steps: find the adaptive components of a system, sort runs of them
into recurring behaviour patterns, and generate enough scenarios to cover
every pattern. Coverage is measured over the instrumented decision points
the components log (each precondition conjunct and each phase transition),
and over a grid on the range of every adaptive scalar. A risk report turns
observed failures into a rate per tick times a configured cost.
"""

from __future__ import annotations

import bisect
import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple, Sequence

from .component import Component
from .kernel import EventLog, Kernel, Process
from .overtake import ABORT_EDGES, DEMO_DECISION_MAP, DecisionParams, OvertakeDecision, TrafficSnapshot
from .runtime import Boundary, ComponentHost, TrafficSource

UNCLASSIFIED = "Unclassified"
SAMPLE_PERIOD = 100


class InsufficientBudget(ValueError):
    pass


# -- step 1 ------------------------------------------------------------------


def system_components(system: Kernel | Iterable[Process | Component]) -> list[Component]:
    items = system.processes.values() if isinstance(system, Kernel) else system
    out = []
    for item in items:
        if isinstance(item, Component):
            out.append(item)
        elif hasattr(item, "components"):
            out.extend(item.components())
    return out


def identify_adaptive(system: Kernel | Iterable[Process | Component]) -> list[str]:
    return [c.id for c in system_components(system) if c.store.adaptive]


# -- step 2 ------------------------------------------------------------------


class TraceStep(NamedTuple):
    edge: str
    hits: dict


Trace = Sequence[TraceStep]


def decision_trace(log: EventLog, subject: str | None = None) -> list[TraceStep]:
    steps = []
    for rec in log.of_kind("decision"):
        if subject is not None and rec.sender != subject:
            continue
        steps.append(TraceStep(rec.payload["edge"], {p: o for p, o in rec.payload["hits"]}))
    return steps


Template = Callable[[random.Random, int], list[TrafficSnapshot]]


@dataclass(frozen=True)
class BehaviorPatternClass:
    name: str
    predicate: Callable[[Trace], bool]
    expected: str
    template: Template | None = None
    overlapping: bool = False

    def matches(self, trace: Trace) -> bool:
        return bool(self.predicate(trace))


def classify_trace(trace: Trace, classes: Sequence[BehaviorPatternClass]) -> str:
    for cls in classes:
        if cls.matches(trace):
            return cls.name
    return UNCLASSIFIED


@dataclass
class Classification:
    counts: dict[str, int] = field(default_factory=dict)
    gaps: int = 0

    def add(self, name: str) -> None:
        self.counts[name] = self.counts.get(name, 0) + 1
        if name == UNCLASSIFIED:
            self.gaps += 1


def classify_all(traces: Iterable[Trace], classes: Sequence[BehaviorPatternClass]) -> Classification:
    result = Classification({c.name: 0 for c in classes})
    for trace in traces:
        result.add(classify_trace(trace, classes))
    return result


def _edges(trace: Trace) -> set[str]:
    return {s.edge for s in trace}


def _stays_in_lane(trace: Trace) -> bool:
    return bool(trace) and _edges(trace) == {"FollowLane->FollowLane"}


def _wants_to_pass(trace: Trace) -> bool:
    return any(s.hits.get("ego_gains") == "true" for s in trace)


# -- demo templates ------------------------------------------------------------


def _snapshots(rows: list[dict]) -> list[TrafficSnapshot]:
    return [TrafficSnapshot(t=i * SAMPLE_PERIOD, **row) for i, row in enumerate(rows)]


def _free_road(rng: random.Random) -> dict:
    ego = rng.uniform(25.0, 35.0)
    return dict(
        ego_speed=ego,
        lead_gap=rng.uniform(30.0, 60.0),
        lead_speed=ego - rng.uniform(3.0, 8.0),
        adjacent_occupied=False,
        rear_gap=rng.uniform(80.0, 150.0),
        rear_closing_speed=rng.uniform(0.5, 5.0),
    )


def completed_template(rng: random.Random, index: int) -> list[TrafficSnapshot]:
    base = _free_road(rng)
    rows = [dict(base, adjacent_occupied=True)] * rng.randint(1, 2)
    rows += [base] * 3            # held long enough: pull out on the third
    rows += [base] * rng.randint(2, 4)    # pull out, pass
    rows += [dict(base, lead_cleared=True)] * 2    # pull in, back in lane
    return _snapshots(rows)


def aborted_template(rng: random.Random, index: int) -> list[TrafficSnapshot]:
    base = _free_road(rng)
    occupied = dict(base, adjacent_occupied=True)
    rows = [base] * 3
    if index % 2:
        rows += [base] * rng.randint(1, 3)    # into Pass first
    rows += [occupied] * 3
    return _snapshots(rows)


def blocked_template(rng: random.Random, index: int) -> list[TrafficSnapshot]:
    base = _free_road(rng)
    variant = index % 3
    dt = DecisionParams().dt_base + DecisionParams().dt_speed_coeff * base["ego_speed"]
    if variant == 0:
        closing = rng.uniform(10.0, 20.0)
        row = dict(base, rear_closing_speed=closing, rear_gap=closing * dt * rng.uniform(0.3, 0.9))
    elif variant == 1:
        # lane is safe but the margin is below the comfort threshold
        closing = rng.uniform(5.0, 10.0)
        row = dict(base, rear_closing_speed=closing, rear_gap=closing * (dt + rng.uniform(0.1, 1.0)))
    else:
        row = dict(base, adjacent_occupied=True)
    return _snapshots([row] * rng.randint(4, 6))


def no_overtake_template(rng: random.Random, index: int) -> list[TrafficSnapshot]:
    base = _free_road(rng)
    base["lead_speed"] = base["ego_speed"] + rng.uniform(0.0, 5.0)
    return _snapshots([base] * rng.randint(3, 6))


DEMO_CLASSES: tuple[BehaviorPatternClass, ...] = (
    BehaviorPatternClass(
        "completed-overtake",
        lambda tr: "PullIn->FollowLane" in _edges(tr),
        "PullOut", completed_template, overlapping=True,
    ),
    BehaviorPatternClass(
        "aborted-overtake",
        lambda tr: bool(_edges(tr) & ABORT_EDGES),
        "FollowLane", aborted_template, overlapping=True,
    ),
    BehaviorPatternClass(
        "blocked-overtake",
        lambda tr: _stays_in_lane(tr) and _wants_to_pass(tr),
        "FollowLane", blocked_template,
    ),
    BehaviorPatternClass(
        "no-overtake",
        lambda tr: _stays_in_lane(tr) and not _wants_to_pass(tr),
        "FollowLane", no_overtake_template,
    ),
)


# -- step 3 ------------------------------------------------------------------

DEFAULT_BUDGET = 20


@dataclass(frozen=True)
class GeneratedScenario:
    name: str
    pattern: str
    snapshots: tuple[TrafficSnapshot, ...]


@dataclass
class GeneratedSuite:
    scenarios: list[GeneratedScenario]
    logs: list[EventLog]
    matched: dict[str, int]
    generator_defects: list[str]


def run_snapshots(snapshots: Sequence[TrafficSnapshot], params: DecisionParams | None = None,
                  seed: int = 0, cid: str = "decider") -> EventLog:
    """Drive a bare decision component with a trace; no guardian, no faults."""
    k = Kernel(seed)
    source = TrafficSource("traffic", snapshots, cid)
    boundary = Boundary("boundary", source.demands(), SAMPLE_PERIOD, cid)
    k.register(source)
    k.register(ComponentHost(OvertakeDecision(cid, params), output_to=boundary.id))
    k.register(boundary)
    k.start()
    end = (snapshots[-1].t if snapshots else 0) + SAMPLE_PERIOD + 1
    return k.run_until(end)


def generate_tests(classes: Sequence[BehaviorPatternClass] = DEMO_CLASSES, budget: int = DEFAULT_BUDGET,
                   seed: int = 0, params: DecisionParams | None = None) -> GeneratedSuite:
    """Round-robin over the classes; each scenario is one template draw."""
    classes = [c for c in classes if c.template is not None]
    if budget < len(classes):
        raise InsufficientBudget(f"budget {budget} is below the number of classes ({len(classes)})")
    rng = random.Random(seed)
    scenarios, logs = [], []
    matched = {c.name: 0 for c in classes}
    for i in range(budget):
        cls = classes[i % len(classes)]
        index = i // len(classes)
        snaps = tuple(cls.template(rng, index))
        scenario = GeneratedScenario(f"{cls.name}-{index:03d}", cls.name, snaps)
        log = run_snapshots(snaps, params, seed)
        if classify_trace(decision_trace(log), classes) == cls.name:
            matched[cls.name] += 1
        scenarios.append(scenario)
        logs.append(log)
    defects = [name for name, n in matched.items() if n == 0]
    return GeneratedSuite(scenarios, logs, matched, defects)


# -- coverage ----------------------------------------------------------------


@dataclass
class PointCoverage:
    outcomes: tuple[str, ...]
    hits: dict[str, int]

    @property
    def executable(self) -> int:
        return len(self.outcomes)

    @property
    def executed(self) -> int:
        return sum(1 for o in self.outcomes if self.hits.get(o, 0) > 0)


@dataclass
class CoverageReport:
    points: dict[str, PointCoverage]

    @property
    def executed(self) -> int:
        return sum(p.executed for p in self.points.values())

    @property
    def executable(self) -> int:
        return sum(p.executable for p in self.points.values())

    @property
    def ratio(self) -> float:
        return self.executed / self.executable if self.executable else 0.0

    @property
    def zero_hits(self) -> list[str]:
        return [f"{name}={o}" for name, p in self.points.items() for o in p.outcomes if not p.hits.get(o)]

    def to_dict(self) -> dict:
        return {
            "ratio": self.ratio,
            "executed": self.executed,
            "executable": self.executable,
            "points": {
                name: {"executed": p.executed, "executable": p.executable,
                       "hits": {o: p.hits.get(o, 0) for o in p.outcomes}}
                for name, p in self.points.items()
            },
            "zero_hits": self.zero_hits,
        }


def _logs(logs: EventLog | Iterable[EventLog]) -> list[EventLog]:
    return [logs] if isinstance(logs, EventLog) else list(logs)


def statement_coverage(logs: EventLog | Iterable[EventLog],
                       decision_map: dict[str, Sequence[str]] = DEMO_DECISION_MAP) -> CoverageReport:
    points = {name: PointCoverage(tuple(outcomes), {}) for name, outcomes in decision_map.items()}
    for log in _logs(logs):
        for rec in log.of_kind("decision"):
            for name, outcome in rec.payload["hits"]:
                point = points.get(name)
                if point is not None and outcome in point.outcomes:
                    point.hits[outcome] = point.hits.get(outcome, 0) + 1
    return CoverageReport(points)


@dataclass(frozen=True)
class ParamGrid:
    """``k`` equal cells on ``[lo, hi]``; cells are half-open, the last is closed."""

    name: str
    lo: float
    hi: float
    k: int = 10

    def __post_init__(self):
        if self.k < 1 or not self.lo < self.hi:
            raise ValueError(f"bad grid for {self.name}")

    @property
    def edges(self) -> list[float]:
        return [self.lo + (self.hi - self.lo) * i / self.k for i in range(self.k)] + [self.hi]

    def cell(self, value: float) -> int | None:
        if not self.lo <= value <= self.hi:
            return None
        if value == self.hi:
            return self.k - 1
        return bisect.bisect_right(self.edges, value) - 1


def grids_for(component: Component, k: int = 10) -> list[ParamGrid]:
    return [ParamGrid(s.name, s.lo, s.hi, k) for s in component.store.scalars.values()]


@dataclass
class ParamCoverage:
    name: str
    visited: list[bool]

    @property
    def ratio(self) -> float:
        return sum(self.visited) / len(self.visited)

    def to_dict(self) -> dict:
        return {"ratio": self.ratio, "visited": [int(v) for v in self.visited]}


def param_coverage(logs: EventLog | Iterable[EventLog], grids: Sequence[ParamGrid],
                   subject: str | None = None) -> dict[str, ParamCoverage]:
    out = {g.name: ParamCoverage(g.name, [False] * g.k) for g in grids}
    by_name = {g.name: g for g in grids}
    for log in _logs(logs):
        for rec in log.of_kind("decision"):
            if subject is not None and rec.sender != subject:
                continue
            for name, value in rec.payload.get("params", {}).items():
                grid = by_name.get(name)
                cell = grid.cell(value) if grid is not None else None
                if cell is not None:
                    out[name].visited[cell] = True
    return out


# -- risk --------------------------------------------------------------------


@dataclass(frozen=True)
class RiskReport:
    failures: int
    exposure_ticks: int
    cost: float

    @property
    def rate(self) -> float:
        return self.failures / self.exposure_ticks if self.exposure_ticks else 0.0

    @property
    def risk(self) -> float:
        return self.rate * self.cost

    def to_dict(self) -> dict:
        return {"failures": self.failures, "exposure_ticks": self.exposure_ticks, "rate": self.rate,
                "cost": self.cost, "risk": self.risk}


def count_failures(log: EventLog) -> int:
    return sum(1 for r in log.of_kind("verdict") if r.payload.get("verdict") == "Failure")


def exposure(log: EventLog) -> int:
    ends = log.of_kind("end")
    if ends:
        return int(ends[-1].payload.get("duration", ends[-1].time))
    return log[-1].time if len(log) else 0


def risk_report(logs: EventLog | Iterable[EventLog], cost: float) -> RiskReport:
    if cost < 0:
        raise ValueError("cost must be non-negative")
    logs = _logs(logs)
    return RiskReport(sum(count_failures(lg) for lg in logs), sum(exposure(lg) for lg in logs), float(cost))
