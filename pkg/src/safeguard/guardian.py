"""The guardian: a central supervision unit for intelligent components.

It pings every supervised component periodically and restarts any that
misses its response deadline, substituting a failover component for the
primary function while the restart is in progress. It can also inject test
probes in uncritical situations, compare the answers against acceptance
bands that are fixed in the guardian, and filter the test answers out of
the functional output stream. Watchdog plausibility checks and parameter
range and memory budget monitors complete the picture.
"""

from __future__ import annotations

import enum
from collections import OrderedDict, deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .component import Component
from .kernel import Message, MessageKind, Process, VirtualTime
from .verdicts import Cause, Verdict


class GuardianError(Exception):
    pass


class UnknownProbeId(GuardianError, KeyError):
    pass


class DuplicateMember(GuardianError, ValueError):
    pass


class Mode(str, enum.Enum):
    NORMAL = "Normal"
    FAILOVER = "Failover"
    RESTARTING = "Restarting"


@dataclass(frozen=True)
class Band:
    """Closed interval ``[lo, hi]`` or, if ``values`` is set, a finite set."""

    lo: float = 0.0
    hi: float = 0.0
    values: frozenset | None = None

    def __post_init__(self):
        if self.values is not None and not self.values:
            raise ValueError("admissible set must be nonempty")
        if self.values is None and self.lo > self.hi:
            raise ValueError(f"empty interval [{self.lo}, {self.hi}]")

    @classmethod
    def interval(cls, lo: float, hi: float) -> Band:
        return cls(lo, hi)

    @classmethod
    def admissible(cls, values: Iterable[float]) -> Band:
        return cls(values=frozenset(values))

    def contains(self, x: float) -> bool:
        if self.values is not None:
            return x in self.values
        return self.lo <= x <= self.hi

    @property
    def width(self) -> float:
        if self.values is not None:
            return max(self.values) - min(self.values)
        return self.hi - self.lo


@dataclass(frozen=True)
class TestProbe:
    __test__ = False  # keep pytest from collecting this

    probe_id: str
    inputs: tuple
    bands: dict[int, Band]

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(self.inputs))
        if not self.bands:
            raise ValueError(f"probe {self.probe_id} checks no channel")

    def accepts(self, outputs: Sequence[float]) -> bool:
        return all(ch < len(outputs) and band.contains(outputs[ch]) for ch, band in self.bands.items())


@dataclass
class GuardianConfig:
    ping_period: VirtualTime = 100
    response_deadline: VirtualTime = 20
    max_restarts: int = 3
    failover_target: str | None = None
    probe_schedule: list[tuple[TestProbe, VirtualTime]] = field(default_factory=list)
    monitor_period: VirtualTime = 0
    memory_budget: int | None = None
    restart_duration: VirtualTime = 200
    watchdog: Callable | None = None
    watchdog_window: int = 5

    def __post_init__(self):
        if self.ping_period <= 0:
            raise ValueError("ping_period must be positive")
        if not self.response_deadline < self.ping_period:
            raise ValueError("response_deadline must be shorter than ping_period")
        if self.max_restarts < 0:
            raise ValueError("max_restarts must be non-negative")
        if self.monitor_period < 0 or self.restart_duration < 0:
            raise ValueError("periods and durations must be non-negative")
        ids = [p.probe_id for p, _ in self.probe_schedule]
        if len(set(ids)) != len(ids):
            raise ValueError("probe ids must be unique")


@dataclass
class GuardianState:
    mode: Mode = Mode.NORMAL
    restarts_used: int = 0
    outstanding_pings: dict[str, VirtualTime] = field(default_factory=dict)
    outstanding_probes: dict[str, VirtualTime] = field(default_factory=dict)


def filter_outbound(outbound: Iterable[Message]) -> list[Message]:
    """Functional stream: everything that is not test traffic, order kept."""
    return [m for m in outbound if not m.is_test]


def watchdog_check(inputs_window: Sequence, output: Sequence[float], plausibility: Callable,
                   subject: str = "", now: VirtualTime = 0) -> Verdict:
    if plausibility(inputs_window, output):
        return Verdict.okay(subject, now)
    return Verdict.defect(subject, Cause.WATCHDOG_IMPLAUSIBLE, now)


def run_monitors(component: Component, memory_budget: int | None, now: VirtualTime,
                 subject: str | None = None) -> list[Verdict]:
    """Range and budget monitor for one component.

    Out-of-range scalars are reset to their init value individually. A case
    base over budget is evicted oldest-first down to the budget.
    """
    subject = subject or component.id
    verdicts = []
    store = component.store
    for violation in store.check():
        store[violation.name].value = store[violation.name].init
        verdicts.append(Verdict.defect(subject, Cause.PARAM_OUT_OF_RANGE, now))
    cb = store.case_base
    if memory_budget is not None and cb is not None and len(cb) > memory_budget:
        cb.evict_to(memory_budget)
        verdicts.append(Verdict.defect(subject, Cause.BUDGET_EXCEEDED, now))
    return verdicts


class Guardian(Process):
    """Supervision unit and output gate of the primary function.

    With a guardian in place, sensor inputs reach the function through the
    guardian and functional outputs leave through it, so that it can switch
    producers during a restart and keep test answers off the boundary.
    Inputs that were forwarded but not yet answered are replayed to the
    new producer on every switch, unless they are older than two ping
    periods.
    """

    def __init__(self, gid: str, config: GuardianConfig, function: str, boundary: str,
                 supervised: Sequence[str] | None = None, bus_latency: VirtualTime = 1,
                 criticality: Callable[[VirtualTime], bool] | None = None):
        super().__init__(gid)
        self.config = config
        self.function = function
        self.boundary = boundary
        self.supervised = list(supervised) if supervised is not None else [function]
        self.bus_latency = bus_latency
        self.criticality = criticality or (lambda now: False)
        self.state = GuardianState()
        self.cascade: list[str] = []
        self.restarting: set[str] = set()
        self.abandoned: set[str] = set()
        self.back_since: dict[str, VirtualTime] = {}
        self.permanent_failover = False
        self.pending: OrderedDict[int, tuple[VirtualTime, tuple]] = OrderedDict()
        self.window: deque = deque(maxlen=config.watchdog_window)
        self._probes = {p.probe_id: p for p, _ in config.probe_schedule}
        self._probe_target: dict[str, str] = {}

    # -- topology ---------------------------------------------------------

    def form_cascade(self, order: Sequence[str]) -> None:
        order = list(order)
        if not order:
            raise ValueError("cascade needs at least one member")
        if len(set(order)) != len(order):
            raise DuplicateMember("cascade members must be distinct")
        if self.kernel is not None:
            for cid in order:
                if cid not in self.kernel.processes:
                    raise KeyError(cid)
        self.cascade = order
        self.supervised = [order[0]]
        if self.kernel is not None:
            self._wire_cascade()

    def _wire_cascade(self) -> None:
        procs = self.kernel.processes
        for i, cid in enumerate(self.cascade):
            successor = self.cascade[i + 1] if i + 1 < len(self.cascade) else None
            procs[cid].link_successor(successor, self.id, self.config.response_deadline)

    # -- lifecycle --------------------------------------------------------

    def start(self) -> None:
        if self.cascade:
            self._wire_cascade()
        self.kernel.call_at(0, self.tick)
        for probe, earliest in self.config.probe_schedule:
            self.kernel.call_at(max(earliest, self.kernel.now), self._try_probe, probe)

    @property
    def mode(self) -> Mode:
        return self.state.mode

    def active_producer(self) -> str | None:
        if self.state.mode is Mode.FAILOVER:
            return self.config.failover_target
        if self.state.mode is Mode.RESTARTING or self.function in self.abandoned:
            return None
        return self.function

    def _set_mode(self, mode: Mode) -> None:
        if mode is not self.state.mode:
            self.state.mode = mode
            self.kernel.record("mode", self.id, self.function, {"mode": mode.value})

    # -- ping -------------------------------------------------------------

    def tick(self) -> None:
        k = self.kernel
        now = k.now
        for cid in self.supervised:
            if cid in self.restarting or cid in self.abandoned:
                continue
            self.state.outstanding_pings[cid] = now
            k.send(Message(self.id, cid, MessageKind.PING, (now,)), self.bus_latency)
        k.call_at(now + self.config.response_deadline, self.evaluate_deadlines)
        k.call_at(now + self.config.ping_period, self.tick)

    def evaluate_deadlines(self, now: VirtualTime | None = None) -> list[Verdict]:
        now = self.kernel.now if now is None else now
        deadline = self.config.response_deadline
        verdicts = []
        for cid, sent in list(self.state.outstanding_pings.items()):
            if now - sent >= deadline:
                del self.state.outstanding_pings[cid]
                verdicts.append(self._verdict(Verdict.defect(cid, Cause.MISSED_PONG, now)))
                self.restart(cid)
        for pid, sent in list(self.state.outstanding_probes.items()):
            if now - sent >= deadline:
                del self.state.outstanding_probes[pid]
                target = self._probe_target[pid]
                verdicts.append(self._verdict(Verdict.defect(target, Cause.DEADLINE_MISS, now), probe=pid))
                self.restart(target)
        return verdicts

    def _on_pong(self, msg: Message) -> None:
        cid = msg.sender
        sent = self.state.outstanding_pings.get(cid)
        if sent is not None and msg.payload and msg.payload[0] == sent \
                and self.kernel.now - sent < self.config.response_deadline:
            del self.state.outstanding_pings[cid]
        else:
            self.kernel.record("late_pong", cid, self.id, {"ping": msg.payload[0] if msg.payload else None})

    # -- restart and failover ---------------------------------------------

    def restart(self, target: str, now: VirtualTime | None = None) -> None:
        if target in self.restarting or target in self.abandoned:
            return
        k = self.kernel
        if self.state.restarts_used >= self.config.max_restarts:
            self._give_up(target)
            return
        self.state.restarts_used += 1
        self.restarting.add(target)
        self.state.outstanding_pings.pop(target, None)
        k.restart(target, self.config.restart_duration, by=self.id)
        if target == self.function:
            if self.config.failover_target is not None:
                self._set_mode(Mode.FAILOVER)
            else:
                self._set_mode(Mode.RESTARTING)
            self._replay_pending()
        k.call_at(k.now + self.config.restart_duration, self._restart_over, target)

    def _restart_over(self, target: str) -> None:
        self.restarting.discard(target)
        self.back_since[target] = self.kernel.now
        if target == self.function and not self.permanent_failover:
            self._set_mode(Mode.NORMAL)
            self._replay_pending()

    def _give_up(self, target: str) -> None:
        k = self.kernel
        self.abandoned.add(target)
        if target in self.supervised:
            self.state.outstanding_pings.pop(target, None)
        if target != self.function:
            self._verdict(Verdict.defect(target, Cause.RESTART_BUDGET_EXHAUSTED, k.now))
            return
        if self.config.failover_target is not None:
            self.permanent_failover = True
            self._verdict(Verdict.defect(target, Cause.RESTART_BUDGET_EXHAUSTED, k.now), permanent=True)
            self._set_mode(Mode.FAILOVER)
            self._replay_pending()
        else:
            self._verdict(Verdict.failure(target, Cause.RESTART_BUDGET_EXHAUSTED, k.now))

    def _replay_pending(self) -> None:
        producer = self.active_producer()
        if producer is None:
            return
        horizon = self.kernel.now - 2 * self.config.ping_period
        for seq, (arrived, payload) in list(self.pending.items()):
            if arrived < horizon:
                del self.pending[seq]
                continue
            self.kernel.send(Message(self.id, producer, MessageKind.INPUT, payload), self.bus_latency)

    # -- probes -----------------------------------------------------------

    def _try_probe(self, probe: TestProbe) -> None:
        now = self.kernel.now
        self.inject_probe(probe, now, self.criticality(now))

    def inject_probe(self, probe: TestProbe, now: VirtualTime, situation_critical: bool) -> None:
        k = self.kernel
        self._probes.setdefault(probe.probe_id, probe)
        target = self.function
        reason = None
        if situation_critical:
            reason = "critical"
        elif target in self.restarting or target in self.abandoned:
            reason = "target_unavailable"
        if reason is not None:
            retry = (now // self.config.ping_period + 1) * self.config.ping_period
            k.record("probe_deferred", self.id, target, {"probe": probe.probe_id, "reason": reason, "retry": retry})
            k.call_at(retry, self._try_probe, probe)
            return
        self.state.outstanding_probes[probe.probe_id] = now
        self._probe_target[probe.probe_id] = target
        k.send(Message(self.id, target, MessageKind.PROBE, (probe.probe_id,) + probe.inputs), self.bus_latency)
        k.call_at(now + self.config.response_deadline, self.evaluate_deadlines)

    def check_probe_response(self, resp: Message, now: VirtualTime | None = None) -> Verdict:
        now = self.kernel.now if now is None else now
        probe_id = resp.payload[0]
        if probe_id not in self._probes:
            raise UnknownProbeId(probe_id)
        probe = self._probes[probe_id]
        target = self._probe_target.get(probe_id, resp.sender)
        sent = self.state.outstanding_probes.pop(probe_id, None)
        if sent is None:
            # already judged by the deadline check
            self.kernel.record("late_probe_response", resp.sender, self.id, {"probe": probe_id})
            return Verdict.defect(target, Cause.DEADLINE_MISS, now)
        outputs = list(resp.payload[1:])
        if probe.accepts(outputs):
            return self._verdict(Verdict.okay(target, now), probe=probe_id)
        verdict = self._verdict(Verdict.defect(target, Cause.PROBE_OUT_OF_BAND, now), probe=probe_id,
                                outputs=outputs)
        self.restart(target)
        return verdict

    # -- gate -------------------------------------------------------------

    def filter(self, outbound: Iterable[Message]) -> list[Message]:
        return filter_outbound(outbound)

    def _on_input(self, msg: Message) -> None:
        seq = msg.payload[0]
        horizon = self.kernel.now - 2 * self.config.ping_period
        while self.pending and next(iter(self.pending.values()))[0] < horizon:
            self.pending.popitem(last=False)
        self.pending[seq] = (self.kernel.now, msg.payload)
        self.window.append(list(msg.payload[1:]))
        producer = self.active_producer()
        if producer is not None:
            self.kernel.send(Message(self.id, producer, MessageKind.INPUT, msg.payload), self.bus_latency)

    def _on_outbound(self, msg: Message) -> None:
        for m in self.filter([msg]):
            seq = m.payload[0]
            if seq not in self.pending:
                continue
            del self.pending[seq]
            if self.config.watchdog is not None:
                v = watchdog_check(list(self.window), list(m.payload[1:]), self.config.watchdog,
                                   m.sender, self.kernel.now)
                if not v.ok:
                    self._verdict(v, seq=seq)
            self.kernel.send(Message(m.sender, self.boundary, MessageKind.OUTPUT, m.payload), self.bus_latency)

    def _on_control(self, msg: Message) -> None:
        what = msg.payload[0] if msg.payload else None
        if what == "miss":
            subject = msg.payload[1]
            sent = msg.payload[2] if len(msg.payload) > 2 else self.kernel.now
            if subject in self.restarting or subject in self.abandoned:
                return
            if sent < self.back_since.get(subject, 0):
                return    # the ping went out while the subject was still restarting
            self._verdict(Verdict.defect(subject, Cause.MISSED_PONG, self.kernel.now), reporter=msg.sender)
            self.restart(subject)
        elif what == "escalate":
            cause = Cause(msg.payload[1])
            if msg.sender in self.restarting or msg.sender in self.abandoned:
                return
            self._verdict(Verdict.defect(msg.sender, cause, self.kernel.now), escalated=True)
            self.restart(msg.sender)

    def on_message(self, msg: Message) -> None:
        kind = msg.kind
        if kind is MessageKind.INPUT:
            self._on_input(msg)
        elif kind is MessageKind.OUTPUT:
            self._on_outbound(msg)
        elif kind is MessageKind.PROBE_RESPONSE:
            self.check_probe_response(msg)
        elif kind is MessageKind.PONG:
            self._on_pong(msg)
        elif kind is MessageKind.CONTROL:
            self._on_control(msg)

    def _verdict(self, verdict: Verdict, **extra) -> Verdict:
        self.kernel.record("verdict", self.id, verdict.subject, verdict.payload(**extra))
        return verdict

