"""Scenario files: schema, validation and system assembly.

A scenario is a YAML document. It is validated completely, including
cross references between sections, before anything is built, and every
error carries the line it refers to.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Annotated, Any, Literal, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .component import CaseBase, Component, PassThrough, ScalarParam, StepCostModel
from .guardian import Band, Guardian, GuardianConfig, TestProbe
from .kernel import EventLog, FaultKind, FaultSpec, Kernel
from .overtake import (DecisionParams, FallbackDecision, OvertakeDecision, TrafficSnapshot,
                       no_pullout_into_occupied_lane)
from .redundancy import RedundancyGroup, build_group
from .runtime import Boundary, ComponentHost, HostBase, TrafficSource
from .testmethod import DEMO_CLASSES

SCHEMA_VERSION = 1
NonNeg = Annotated[int, Field(ge=0)]
Positive = Annotated[int, Field(gt=0)]


class ScenarioError(Exception):
    def __init__(self, path: str, problems: list[tuple[int | None, str]]):
        self.path = path
        self.problems = problems
        super().__init__("\n".join(self.lines()))

    def lines(self) -> list[str]:
        return [f"{self.path}:{line if line is not None else '?'}: {msg}" for line, msg in self.problems]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ScalarSpec(_Strict):
    init: float
    lo: float
    hi: float

    @model_validator(mode="after")
    def _ordered(self):
        if not self.lo <= self.init <= self.hi:
            raise ValueError("need lo <= init <= hi")
        return self


class CaseBaseSpec(_Strict):
    max_size: Positive
    forgetting: Literal["none", "evict_oldest"] = "evict_oldest"


class CostSpec(_Strict):
    base_latency: NonNeg = 1
    per_case_latency: NonNeg = 0


class ComponentSpec(_Strict):
    type: Literal["overtake", "fallback", "passthrough"]
    min_time_gap: ScalarSpec | None = None
    dt_base: float = 2.0
    dt_speed_coeff: float = 0.05
    consecutive_required: Positive = 3
    learn_step: float = 0.1
    learning: bool = True
    case_base: CaseBaseSpec | None = None
    cost: CostSpec = CostSpec()
    headway: float = 2.0


class GroupSpec(_Strict):
    id: str
    mode: Literal["ActiveHot", "PassiveCold", "TMR", "ReinitializedCopy"]
    members: list[str]
    vote_tolerance: Annotated[float, Field(ge=0)] | list[Annotated[float, Field(ge=0)]] = 0.0
    sync_duration: NonNeg = 0
    reinit_period: NonNeg = 0
    divergence_threshold: float | list[float] | None = None


class TopologySpec(_Strict):
    function: str
    supervision: Literal["flat", "cascade"] = "flat"
    cascade: list[str] = []
    supervised: list[str] | None = None
    groups: list[GroupSpec] = []


class SnapshotSpec(_Strict):
    ego_speed: Annotated[float, Field(ge=0)]
    lead_gap: Annotated[float, Field(ge=0)]
    lead_speed: Annotated[float, Field(ge=0)]
    adjacent_occupied: bool
    rear_gap: Annotated[float, Field(ge=0)]
    rear_closing_speed: float
    lead_cleared: bool = False
    feedback: float = 0.0
    repeat: Positive = 1


class AdmissibleSpec(_Strict):
    values: list[float] = Field(min_length=1)


class ProbeSpec(_Strict):
    id: str
    earliest: NonNeg = 0
    inputs: SnapshotSpec
    bands: dict[int, Union[Annotated[list[float], Field(min_length=2, max_length=2)], AdmissibleSpec]]

    @model_validator(mode="after")
    def _bands(self):
        if not self.bands:
            raise ValueError("a probe must check at least one channel")
        for ch, b in self.bands.items():
            if isinstance(b, list) and b[0] > b[1]:
                raise ValueError(f"band on channel {ch} is empty")
        return self


class GuardianSpec(_Strict):
    enabled: bool = True
    ping_period: Positive = 100
    response_deadline: Positive = 20
    max_restarts: NonNeg = 3
    failover_target: str | None = None
    restart_duration: NonNeg = 200
    monitor_period: NonNeg = 0
    memory_budget: Positive | None = None
    watchdog: Literal["no_pullout_into_occupied_lane"] | None = None
    watchdog_window: Positive = 5
    probes: list[ProbeSpec] = []

    @model_validator(mode="after")
    def _deadline(self):
        if not self.response_deadline < self.ping_period:
            raise ValueError("response_deadline must be shorter than ping_period")
        return self


class GeneratorSpec(_Strict):
    samples: Positive
    feedback: float = 0.0
    mix: list[Literal["completed-overtake", "aborted-overtake", "blocked-overtake", "no-overtake"]] = \
        [c.name for c in DEMO_CLASSES]


class TrafficSpec(_Strict):
    period: Positive = 100
    trace: list[SnapshotSpec] | None = None
    generator: GeneratorSpec | None = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.trace is None) == (self.generator is None):
            raise ValueError("give exactly one of trace or generator")
        return self


class UniformSpec(_Strict):
    uniform: Annotated[list[NonNeg], Field(min_length=2, max_length=2)]

    @model_validator(mode="after")
    def _ordered(self):
        if self.uniform[0] > self.uniform[1]:
            raise ValueError("uniform bounds out of order")
        return self


class FaultModel(_Strict):
    target: str
    kind: Literal["Crash", "Hang", "Delay", "CorruptOutput", "LeakGrowth", "CorruptParam"]
    active_from: NonNeg | UniformSpec
    active_until: NonNeg | None = None
    duration: NonNeg = 0
    extra_latency: NonNeg = 0
    channel: NonNeg = 0
    value: float = 0.0
    rate: float = 0.0
    param: str = ""


class ReportSpec(_Strict):
    failure_cost: Annotated[float, Field(ge=0)] = 1.0
    grid_cells: Positive = 10


class Scenario(_Strict):
    schema_version: Literal[1]
    name: str = ""
    seed: int = 0
    duration: Positive
    bus_latency: NonNeg = 1
    jitter: NonNeg = 0
    demand_deadline: Positive = 150
    components: dict[str, ComponentSpec] = Field(min_length=1)
    topology: TopologySpec
    guardian: GuardianSpec | None = None
    traffic: TrafficSpec
    faults: list[FaultModel] = []
    criticality: list[Annotated[list[NonNeg], Field(min_length=2, max_length=2)]] = []
    report: ReportSpec = ReportSpec()


# -- validation ----------------------------------------------------------------


def _line_of(node: yaml.Node | None, loc: tuple) -> int | None:
    """1-based line of the deepest node along ``loc`` that exists."""
    if node is None:
        return None
    line = node.start_mark.line + 1
    for key in loc:
        child = None
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                if str(k.value) == str(key):
                    child = v
                    break
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            child = node.value[key]
        if child is None:
            break
        node = child
        line = node.start_mark.line + 1
    return line


def _semantic_problems(s: Scenario) -> list[tuple[tuple, str]]:
    out: list[tuple[tuple, str]] = []
    comps = s.components
    group_ids = {g.id for g in s.topology.groups}
    grouped: dict[str, str] = {}
    for gi, g in enumerate(s.topology.groups):
        if g.id in comps:
            out.append((("topology", "groups", gi, "id"), f"group id {g.id!r} clashes with a component"))
        for mi, m in enumerate(g.members):
            if m not in comps:
                out.append((("topology", "groups", gi, "members", mi), f"unknown component {m!r}"))
            elif m in grouped:
                out.append((("topology", "groups", gi, "members", mi), f"{m!r} is already in group {grouped[m]!r}"))
            else:
                grouped[m] = g.id
        try:
            RedundancyGroup(g.id, g.mode, g.members, g.vote_tolerance, g.sync_duration, g.reinit_period,
                            g.divergence_threshold)
        except ValueError as exc:
            out.append((("topology", "groups", gi), str(exc)))
    units = (set(comps) - set(grouped)) | group_ids
    fn = s.topology.function
    if fn not in units:
        out.append((("topology", "function"), f"function {fn!r} is not a component or group"))
    elif fn in comps and comps[fn].type == "fallback":
        out.append((("topology", "function"), "the function cannot be a fallback component"))
    for i, cid in enumerate(s.topology.cascade):
        if cid not in units:
            out.append((("topology", "cascade", i), f"unknown cascade member {cid!r}"))
    if len(set(s.topology.cascade)) != len(s.topology.cascade):
        out.append((("topology", "cascade"), "cascade members must be distinct"))
    if s.topology.supervision == "cascade" and not s.topology.cascade:
        out.append((("topology", "cascade"), "cascade supervision needs a cascade order"))
    for i, cid in enumerate(s.topology.supervised or []):
        if cid not in units:
            out.append((("topology", "supervised", i), f"unknown supervised unit {cid!r}"))
    g = s.guardian
    if g is not None and g.failover_target is not None:
        ft = g.failover_target
        if ft not in comps or ft in grouped:
            out.append((("guardian", "failover_target"), f"failover target {ft!r} is not a standalone component"))
        elif ft == fn:
            out.append((("guardian", "failover_target"), "failover target must differ from the function"))
    if g is not None:
        ids = [p.id for p in g.probes]
        if len(set(ids)) != len(ids):
            out.append((("guardian", "probes"), "probe ids must be unique"))
    targets = set(comps) | group_ids
    for i, f in enumerate(s.faults):
        where = ("faults", i)
        if f.target not in targets:
            out.append((where + ("target",), f"unknown fault target {f.target!r}"))
            continue
        until = f.active_until if f.active_until is not None else s.duration
        start = f.active_from if isinstance(f.active_from, int) else f.active_from.uniform[1]
        if not start < until:
            out.append((where + ("active_from",), "active_from must precede active_until"))
        if f.kind == "Hang" and f.duration <= 0:
            out.append((where + ("duration",), "Hang needs a positive duration"))
        if f.kind == "LeakGrowth" and f.rate <= 0:
            out.append((where + ("rate",), "LeakGrowth needs a positive rate"))
        if f.kind == "CorruptParam":
            spec = comps.get(f.target)
            if spec is None or spec.type != "overtake" or f.param != "min_time_gap":
                out.append((where + ("param",), f"{f.target!r} has no adaptive scalar {f.param!r}"))
    for i, (lo, hi) in enumerate(s.criticality):
        if lo >= hi:
            out.append((("criticality", i), "empty criticality interval"))
    return out


def _format_loc(loc: tuple) -> str:
    return ".".join(str(p) for p in loc)


def parse_scenario(text: str, path: str = "<scenario>") -> Scenario:
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ScenarioError(path, [(mark.line + 1 if mark else None, f"not valid YAML: {exc}")]) from None
    if not isinstance(data, dict):
        raise ScenarioError(path, [(1, "a scenario must be a mapping")])
    try:
        scn = Scenario.model_validate(data)
    except ValidationError as exc:
        problems = []
        for err in exc.errors():
            loc = _clean_loc(data, err["loc"])
            problems.append((_line_of(node, loc), f"{_format_loc(loc) or '<root>'}: {err['msg']}"))
        raise ScenarioError(path, problems) from None
    problems = [(_line_of(node, loc), f"{_format_loc(loc)}: {msg}") for loc, msg in _semantic_problems(scn)]
    if problems:
        raise ScenarioError(path, problems)
    return scn


_TYPE_NAMES = {"int", "float", "str", "bool", "list", "dict", "none"}


def _is_union_tag(part) -> bool:
    return isinstance(part, str) and (part in _TYPE_NAMES or part[:1].isupper() or any(c in part for c in "[]-"))


def _clean_loc(data: Any, loc: tuple) -> tuple:
    """Drop the union member names pydantic inserts into error locations."""
    out = []
    for part in loc:
        if isinstance(data, dict) and part in data:
            data = data[part]
        elif isinstance(data, list) and isinstance(part, int) and part < len(data):
            data = data[part]
        elif _is_union_tag(part):
            continue
        else:
            data = None
        out.append(part)
    return tuple(out)


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(str(path), [(None, f"cannot read scenario: {exc.strerror}")]) from None
    return parse_scenario(text, str(path))


# -- assembly ----------------------------------------------------------------


def make_component(cid: str, spec: ComponentSpec) -> Component:
    cost = StepCostModel(spec.cost.base_latency, spec.cost.per_case_latency)
    if spec.type == "fallback":
        return FallbackDecision(cid, cost, spec.headway)
    if spec.type == "passthrough":
        return PassThrough(cid, cost=cost)
    mtg = spec.min_time_gap or ScalarSpec(init=1.5, lo=0.8, hi=3.0)
    params = DecisionParams(ScalarParam.fresh("min_time_gap", mtg.init, mtg.lo, mtg.hi), spec.dt_base,
                            spec.dt_speed_coeff, spec.consecutive_required, spec.learn_step)
    cb = None if spec.case_base is None else CaseBase(spec.case_base.max_size, spec.case_base.forgetting)
    return OvertakeDecision(cid, params, cb, cost, learning=spec.learning)


def _snapshot(spec: SnapshotSpec, t: int) -> TrafficSnapshot:
    return TrafficSnapshot(spec.ego_speed, spec.lead_gap, spec.lead_speed, spec.adjacent_occupied, spec.rear_gap,
                           spec.rear_closing_speed, t, spec.lead_cleared, spec.feedback)


def make_traffic(spec: TrafficSpec, rng) -> list[TrafficSnapshot]:
    rows: list = []
    if spec.trace is not None:
        for s in spec.trace:
            rows.extend([s] * s.repeat)
        return [_snapshot(s, i * spec.period) for i, s in enumerate(rows)]
    by_name = {c.name: c for c in DEMO_CLASSES}
    mix = [by_name[n] for n in spec.generator.mix]
    episode = 0
    while len(rows) < spec.generator.samples:
        cls = mix[rng.randrange(len(mix))]
        rows.extend(cls.template(rng, episode))
        episode += 1
    fb = spec.generator.feedback
    return [replace(s, t=i * spec.period, feedback=fb) for i, s in enumerate(rows[:spec.generator.samples])]


def probe_from(spec: ProbeSpec) -> TestProbe:
    bands = {ch: Band.interval(*b) if isinstance(b, list) else Band.admissible(b.values)
             for ch, b in spec.bands.items()}
    return TestProbe(spec.id, tuple(_snapshot(spec.inputs, 0).to_values()), bands)


@dataclass
class System:
    scenario: Scenario
    kernel: Kernel
    guardian: Guardian | None
    boundary: Boundary
    hosts: dict[str, HostBase]
    seed: int

    @property
    def duration(self) -> int:
        return self.scenario.duration

    def meta(self) -> dict:
        s = self.scenario
        grids = []
        for host in self.hosts.values():
            for comp in host.components():
                for sc in comp.store.scalars.values():
                    grids.append([comp.id, sc.name, sc.lo, sc.hi, s.report.grid_cells])
        return {
            "name": s.name,
            "seed": self.seed,
            "duration": s.duration,
            "guardian": self.guardian is not None,
            "function": s.topology.function,
            "failure_cost": s.report.failure_cost,
            "grids": grids,
        }

    def run(self) -> EventLog:
        k = self.kernel
        k.record("scenario", "", "", self.meta())
        k.start()
        k.run_until(self.duration)
        k.record("end", "", "", {"duration": self.duration})
        return k.log


def build(s: Scenario, seed: int | None = None, guardian: bool | None = None) -> System:
    seed = s.seed if seed is None else seed
    k = Kernel(seed, s.jitter)
    lat = s.bus_latency
    gspec = s.guardian if s.guardian is not None and s.guardian.enabled else None
    if guardian is False:
        gspec = None
    elif guardian is True and gspec is None:
        gspec = s.guardian.model_copy(update={"enabled": True}) if s.guardian is not None else GuardianSpec()

    fn = s.topology.function
    traffic = make_traffic(s.traffic, k.rng)
    boundary = Boundary("boundary", [(i, snap.t) for i, snap in enumerate(traffic)], s.demand_deadline, fn)
    guard_id = "guardian"
    # without a guardian the function talks to the boundary directly
    out_to = None if gspec is not None else boundary.id

    hosts: dict[str, HostBase] = {}
    grouped = {m for g in s.topology.groups for m in g.members}
    for g in s.topology.groups:
        group = RedundancyGroup(g.id, g.mode, g.members, g.vote_tolerance, g.sync_duration, g.reinit_period,
                                g.divergence_threshold)
        if group.divergence_threshold is None and gspec is not None and gspec.probes:
            bands = probe_from(gspec.probes[0]).bands
            group.divergence_threshold = [bands[ch].width if ch in bands else float("inf")
                                          for ch in range(max(bands) + 1)]
        members = [make_component(m, s.components[m]) for m in g.members]
        hosts[g.id] = build_group(group, members, out_to if g.id == fn else None, lat)
    for cid, spec in s.components.items():
        if cid not in grouped:
            hosts[cid] = ComponentHost(make_component(cid, spec), out_to if cid == fn else None, lat)

    source = TrafficSource("traffic", traffic, guard_id if gspec is not None else fn, lat)
    k.register(source)
    guard = None
    if gspec is not None:
        config = GuardianConfig(
            ping_period=gspec.ping_period,
            response_deadline=gspec.response_deadline,
            max_restarts=gspec.max_restarts,
            failover_target=gspec.failover_target,
            probe_schedule=[(probe_from(p), p.earliest) for p in gspec.probes],
            monitor_period=gspec.monitor_period,
            memory_budget=gspec.memory_budget,
            restart_duration=gspec.restart_duration,
            watchdog=no_pullout_into_occupied_lane if gspec.watchdog else None,
            watchdog_window=gspec.watchdog_window,
        )
        windows = [tuple(w) for w in s.criticality]
        guard = Guardian(guard_id, config, fn, boundary.id, s.topology.supervised, lat,
                         lambda now: any(lo <= now < hi for lo, hi in windows))
        k.register(guard)
        for host in hosts.values():
            host.escalate_to = guard_id
            if gspec.monitor_period > 0 and any(c.store.adaptive for c in host.components()):
                host.attach_monitor(gspec.monitor_period, gspec.memory_budget, guard_id)
    for host in hosts.values():
        k.register(host)
    k.register(boundary)
    if guard is not None and s.topology.supervision == "cascade":
        guard.form_cascade(s.topology.cascade)

    for f in s.faults:
        start = f.active_from if isinstance(f.active_from, int) else k.rng.randint(*f.active_from.uniform)
        until = f.active_until if f.active_until is not None else s.duration
        k.inject_fault(FaultSpec(f.target, FaultKind(f.kind), start, until, f.duration, f.extra_latency,
                                 f.channel, f.value, f.rate, f.param))
    return System(s, k, guard, boundary, hosts, seed)
