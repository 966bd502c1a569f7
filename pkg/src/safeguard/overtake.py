"""Adaptive overtaking decision for a two-lane highway.

The decider consumes abstract traffic snapshots sampled at a fixed period
and runs the maneuver machine FollowLane -> PullOut -> Pass -> PullIn ->
FollowLane. A pull-out is initiated only after the precondition has held
at several consecutive samples:

* the adjacent lane is free,
* the first vehicle behind the ego vehicle on the adjacent lane cannot
  draw level within the situation-dependent window ``dt`` (constant
  velocity extrapolation ``rear_gap / rear_closing_speed``),
* the ego vehicle is faster than the lead vehicle,

and only if the time margin left over by the rear vehicle beyond ``dt``
is at least the learned comfort threshold ``min_time_gap``.
"""

from __future__ import annotations

import copy
import enum
import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Sequence

from .component import CaseBase, Component, ParameterStore, ScalarParam, StepCostModel


class UnorderedHistory(ValueError):
    pass


class Phase(enum.IntEnum):
    FOLLOW_LANE = 0
    PULL_OUT = 1
    PASS = 2
    PULL_IN = 3

    @property
    def label(self) -> str:
        return _LABELS[self]


_LABELS = {
    Phase.FOLLOW_LANE: "FollowLane",
    Phase.PULL_OUT: "PullOut",
    Phase.PASS: "Pass",
    Phase.PULL_IN: "PullIn",
}
PHASE_BY_LABEL = {v: k for k, v in _LABELS.items()}


@dataclass(frozen=True, slots=True)
class TrafficSnapshot:
    ego_speed: float
    lead_gap: float
    lead_speed: float
    adjacent_occupied: bool
    rear_gap: float
    rear_closing_speed: float
    t: int = 0
    lead_cleared: bool = False
    feedback: float = 0.0

    def __post_init__(self):
        if self.lead_gap < 0 or self.rear_gap < 0:
            raise ValueError("gaps must be non-negative")
        if self.ego_speed < 0 or self.lead_speed < 0:
            raise ValueError("speeds must be non-negative")

    def to_values(self) -> list[float]:
        return [
            self.t,
            float(self.ego_speed),
            float(self.lead_gap),
            float(self.lead_speed),
            1.0 if self.adjacent_occupied else 0.0,
            float(self.rear_gap),
            float(self.rear_closing_speed),
            1.0 if self.lead_cleared else 0.0,
            float(self.feedback),
        ]

    @classmethod
    def from_values(cls, values: Sequence[float]) -> TrafficSnapshot:
        t, ego, lgap, lspeed, occ, rgap, rclose, cleared, fb = values
        return cls(ego, lgap, lspeed, bool(occ), rgap, rclose, int(t), bool(cleared), fb)


N_SNAPSHOT_VALUES = 9


def default_min_time_gap() -> ScalarParam:
    return ScalarParam.fresh("min_time_gap", 1.5, 0.8, 3.0)


@dataclass
class DecisionParams:
    min_time_gap: ScalarParam = field(default_factory=default_min_time_gap)
    dt_base: float = 2.0
    dt_speed_coeff: float = 0.05
    consecutive_required: int = 3
    learn_step: float = 0.1

    def __post_init__(self):
        if self.min_time_gap.lo <= 0:
            raise ValueError("min_time_gap lower bound must be positive")
        if self.consecutive_required < 1:
            raise ValueError("consecutive_required must be positive")


def compute_dt(snapshot: TrafficSnapshot, params: DecisionParams) -> float:
    dt = params.dt_base + params.dt_speed_coeff * snapshot.ego_speed
    if dt <= 0:
        raise ValueError(f"non-positive dt {dt}")
    return dt


def rear_safe(snapshot: TrafficSnapshot, dt: float) -> bool:
    closing = snapshot.rear_closing_speed
    return closing <= 0 or snapshot.rear_gap / closing > dt


def time_margin(snapshot: TrafficSnapshot, dt: float) -> float:
    closing = snapshot.rear_closing_speed
    if closing <= 0:
        return math.inf
    return snapshot.rear_gap / closing - dt


def precondition(snapshot: TrafficSnapshot, dt: float, params: DecisionParams | None = None) -> bool:
    if dt <= 0:
        raise ValueError("dt must be positive")
    return (not snapshot.adjacent_occupied) and rear_safe(snapshot, dt) and snapshot.ego_speed > snapshot.lead_speed


def comfort_ok(snapshot: TrafficSnapshot, dt: float, params: DecisionParams) -> bool:
    return time_margin(snapshot, dt) >= params.min_time_gap.value


# decision points instrumented for coverage, with their possible outcomes
_BOOL = ("true", "false")
TRANSITIONS = (
    "FollowLane->FollowLane",
    "FollowLane->PullOut",
    "PullOut->Pass",
    "PullOut->FollowLane",
    "Pass->Pass",
    "Pass->PullIn",
    "Pass->FollowLane",
    "PullIn->FollowLane",
)
DEMO_DECISION_MAP: dict[str, tuple[str, ...]] = {
    "adjacent_free": _BOOL,
    "rear_safe": _BOOL,
    "ego_gains": _BOOL,
    "consecutive": _BOOL,
    "comfort": _BOOL,
    "transition": TRANSITIONS,
}
ABORT_EDGES = frozenset({"PullOut->FollowLane", "Pass->FollowLane"})


def _b(flag: bool) -> str:
    return "true" if flag else "false"


@dataclass(frozen=True)
class DecisionRecord:
    t: int
    prev: Phase
    phase: Phase
    dt: float
    precondition: bool
    hits: tuple[tuple[str, str], ...]

    @property
    def edge(self) -> str:
        return f"{self.prev.label}->{self.phase.label}"

    @property
    def aborted(self) -> bool:
        return self.edge in ABORT_EDGES


def decide(history: Sequence[TrafficSnapshot], params: DecisionParams,
           phase: Phase) -> tuple[Phase, DecisionRecord]:
    if not history:
        raise ValueError("decide needs at least one snapshot")
    for a, b in zip(history, history[1:]):
        if b.t <= a.t:
            raise UnorderedHistory(f"snapshot at t={b.t} follows t={a.t}")

    cur = history[-1]
    dt = compute_dt(cur, params)
    adjacent_free = not cur.adjacent_occupied
    safe_rear = rear_safe(cur, dt)
    gains = cur.ego_speed > cur.lead_speed
    hits = [("adjacent_free", _b(adjacent_free)), ("rear_safe", _b(safe_rear)), ("ego_gains", _b(gains))]
    pre = adjacent_free and safe_rear and gains
    lane_safe = adjacent_free and safe_rear

    k = params.consecutive_required
    if phase is Phase.FOLLOW_LANE:
        held = len(history) >= k and all(
            precondition(s, compute_dt(s, params)) for s in history[-k:]
        )
        comfy = comfort_ok(cur, dt, params)
        hits += [("consecutive", _b(held)), ("comfort", _b(comfy))]
        new = Phase.PULL_OUT if held and comfy else Phase.FOLLOW_LANE
    elif phase is Phase.PULL_OUT:
        new = Phase.PASS if lane_safe else Phase.FOLLOW_LANE
    elif phase is Phase.PASS:
        if not lane_safe:
            new = Phase.FOLLOW_LANE
        elif cur.lead_cleared:
            new = Phase.PULL_IN
        else:
            new = Phase.PASS
    else:
        new = Phase.FOLLOW_LANE

    record = DecisionRecord(cur.t, phase, new, dt, pre, ())
    hits.append(("transition", record.edge))
    return new, replace(record, hits=tuple(hits))


class OvertakeDecision(Component):
    """The adaptive primary. Outputs ``[phase, min_time_gap, dt]``."""

    type_name = "overtake"

    def __init__(self, cid: str, params: DecisionParams | None = None,
                 case_base: CaseBase | None = None, cost: StepCostModel | None = None,
                 learning: bool = True):
        # members of a redundancy group may be built from one config object
        params = copy.deepcopy(params) if params is not None else DecisionParams()
        case_base = copy.deepcopy(case_base)
        store = ParameterStore.of(params.min_time_gap, case_base=case_base, learning_enabled=learning)
        super().__init__(cid, store, cost)
        self._static = params
        self.history: deque = deque(maxlen=params.consecutive_required)
        self.phase = Phase.FOLLOW_LANE
        self.last_record: DecisionRecord | None = None

    @property
    def params(self) -> DecisionParams:
        return replace(self._static, min_time_gap=self.store["min_time_gap"])

    def _compute(self, inputs, now, commit):
        snap = TrafficSnapshot.from_values(inputs)
        params = self.params
        if not commit:
            # answer as if the situation had been held steady long enough
            k = params.consecutive_required
            steady = [replace(snap, t=snap.t + i) for i in range(k)]
            new, record = decide(steady, params, Phase.FOLLOW_LANE)
            self.learn([snap.feedback])
            return [float(new), params.min_time_gap.value, record.dt]

        history = list(self.history) + [snap]
        new, record = decide(history, params, self.phase)
        threshold = params.min_time_gap.value
        self.history.append(snap)
        self.phase = new
        self.last_record = record
        if record.edge == "PullIn->FollowLane" or record.aborted:
            self._remember(snap, record.edge)
        self.learn_comfort(snap.feedback)
        return [float(new), threshold, record.dt]

    def learn_comfort(self, feedback: float) -> None:
        self.learn([feedback])

    def _learn(self, observation):
        feedback = observation[0]
        if feedback:
            self.store["min_time_gap"].value += self._static.learn_step * feedback

    def _remember(self, snap: TrafficSnapshot, outcome: str) -> None:
        cb = self.store.case_base
        if cb is not None and self.store.learning_enabled:
            cb.add((snap.ego_speed, snap.lead_speed, snap.rear_gap, snap.rear_closing_speed), outcome)

    def _operational_state(self):
        return (list(self.history), self.phase, self.last_record)

    def _load_operational_state(self, state):
        history, self.phase, self.last_record = state
        self.history = deque(history, maxlen=self._static.consecutive_required)

    def _reset_operational(self):
        self.history.clear()
        self.phase = Phase.FOLLOW_LANE
        self.last_record = None


SAFE_HEADWAY = 2.0


def fallback_decide(snapshot: TrafficSnapshot) -> Phase:
    """Static degraded decision: keep the lane, keep the distance."""
    return Phase.FOLLOW_LANE


class FallbackDecision(Component):
    """Design-diverse, non-adaptive fallback. Outputs ``[phase, headway, 0]``."""

    type_name = "fallback"

    def __init__(self, cid: str, cost: StepCostModel | None = None, headway: float = SAFE_HEADWAY):
        super().__init__(cid, ParameterStore(learning_enabled=False), cost)
        self.headway = headway

    def _compute(self, inputs, now, commit):
        snap = TrafficSnapshot.from_values(inputs)
        return [float(fallback_decide(snap)), self.headway, 0.0]


def no_pullout_into_occupied_lane(inputs_window: Sequence[Sequence[float]], output: Sequence[float]) -> bool:
    """Watchdog plausibility: never pull out while the adjacent lane is occupied."""
    if not inputs_window or not output:
        return True
    latest = TrafficSnapshot.from_values(inputs_window[-1])
    return not (int(output[0]) == Phase.PULL_OUT and latest.adjacent_occupied)
