"""Kernel processes that run components, feed them and observe them.

* :class:`HostBase` answers pings, takes part in cascaded ping chains,
  answers test probes with learning frozen and runs co-resident range and
  budget monitors.
* :class:`ComponentHost` runs a single component.
* :class:`TrafficSource` plays a traffic trace onto the bus.
* :class:`Boundary` is the system boundary. Every sample is a demand; a
  demand is met when a functional output for it arrives strictly before
  ``issued + deadline``, otherwise a Failure is recorded.
"""

from __future__ import annotations

from typing import Sequence

from .component import Component
from .guardian import run_monitors
from .kernel import FaultKind, FaultSpec, Message, MessageKind, Process, VirtualTime
from .overtake import TrafficSnapshot
from .verdicts import Cause, Verdict


class HostBase(Process):
    def __init__(self, pid: str, output_to: str | None = None, bus_latency: VirtualTime = 1):
        super().__init__(pid)
        self.output_to = output_to
        self.bus_latency = bus_latency
        self.successor: str | None = None
        self.supervisor: str | None = None
        self.escalate_to: str | None = None
        self.link_deadline: VirtualTime = 0
        self._succ_outstanding: dict[VirtualTime, VirtualTime] = {}
        self.monitor_period: VirtualTime = 0
        self.memory_budget: int | None = None
        self.monitor_reporter = ""

    # -- to be provided by subclasses ---------------------------------------

    def components(self) -> list[Component]:
        raise NotImplementedError

    def primary(self) -> Component | None:
        comps = self.components()
        return comps[0] if comps else None

    def handle_input(self, msg: Message) -> None:
        raise NotImplementedError

    def alive(self) -> bool:
        return True

    # -- configuration ------------------------------------------------------

    def link_successor(self, successor: str | None, supervisor: str, deadline: VirtualTime) -> None:
        self.successor = successor
        self.supervisor = supervisor
        self.link_deadline = deadline

    def attach_monitor(self, period: VirtualTime, budget: int | None, reporter: str) -> None:
        self.monitor_period = period
        self.memory_budget = budget
        self.monitor_reporter = reporter

    def start(self) -> None:
        if self.monitor_period > 0:
            self.kernel.call_at(self.monitor_period, self._monitor_tick)

    # -- helpers ------------------------------------------------------------

    def member_ok(self, cid: str) -> bool:
        k = self.kernel
        return not k.is_unavailable(cid) and not k.is_hung(cid)

    def apply_leak(self, comp: Component) -> None:
        n = self.kernel.leak_due(comp.id)
        cb = comp.store.case_base
        if n and cb is not None:
            for _ in range(n):
                cb.add((0.0,), "leak")

    def step_member(self, comp: Component, values: Sequence[float]) -> tuple[list, VirtualTime]:
        k = self.kernel
        self.apply_leak(comp)
        before = {n: s.value for n, s in comp.store.scalars.items()}
        prev = getattr(comp, "last_record", None)
        outputs, latency = comp.step(values, k.now)
        rec = getattr(comp, "last_record", None)
        if rec is not None and rec is not prev:
            k.record("decision", comp.id, "", {
                "t": rec.t,
                "phase": rec.phase.label,
                "edge": rec.edge,
                "pre": rec.precondition,
                "hits": [list(h) for h in rec.hits],
                "params": before,
            })
        return k.corrupt_outputs(comp.id, outputs), latency

    def emit_later(self, delay: VirtualTime, msg: Message) -> None:
        k = self.kernel
        k.call_at(k.now + delay, k.send, msg, self.bus_latency)

    def escalate(self, cause: Cause) -> None:
        if self.escalate_to is not None:
            self.kernel.send(Message(self.id, self.escalate_to, MessageKind.CONTROL, ("escalate", cause.value)),
                             self.bus_latency)

    def verdict(self, verdict: Verdict, **extra) -> Verdict:
        self.kernel.record("verdict", self.id, verdict.subject, verdict.payload(**extra))
        return verdict

    # -- message handling ---------------------------------------------------

    def on_message(self, msg: Message) -> None:
        kind = msg.kind
        if kind is MessageKind.INPUT:
            self.handle_input(msg)
        elif kind is MessageKind.PING:
            self._on_ping(msg)
        elif kind is MessageKind.PONG:
            self._on_pong(msg)
        elif kind is MessageKind.PROBE:
            self.handle_probe(msg)

    def _on_ping(self, msg: Message) -> None:
        if not self.alive():
            return
        k = self.kernel
        k.send(Message(self.id, msg.sender, MessageKind.PONG, msg.payload), self.bus_latency)
        if self.successor is not None:
            now = k.now
            self._succ_outstanding[now] = now
            k.send(Message(self.id, self.successor, MessageKind.PING, (now,)), self.bus_latency)
            k.call_at(now + self.link_deadline, self._check_successor, now)

    def _on_pong(self, msg: Message) -> None:
        sent = msg.payload[0] if msg.payload else None
        if sent in self._succ_outstanding and self.kernel.now - sent < self.link_deadline:
            del self._succ_outstanding[sent]

    def _check_successor(self, sent: VirtualTime) -> None:
        if self._succ_outstanding.pop(sent, None) is None:
            return
        if self.supervisor is not None:
            self.kernel.send(Message(self.id, self.supervisor, MessageKind.CONTROL, ("miss", self.successor, sent)),
                             self.bus_latency)

    def handle_probe(self, msg: Message) -> None:
        comp = self.primary()
        if comp is None:
            return
        k = self.kernel
        probe_id, *values = msg.payload
        before = comp.store.digest()
        with comp.store.frozen():
            outputs, latency = comp.step(values, k.now, commit=False)
        after = comp.store.digest()
        k.record("probe_freeze", comp.id, msg.sender, {"probe": probe_id, "before": before, "after": after},
                 is_test=True)
        k.set_busy(self.id, k.now + latency)
        self.emit_later(latency, Message(self.id, msg.sender, MessageKind.PROBE_RESPONSE, (probe_id, *outputs)))

    # -- monitors -----------------------------------------------------------

    def _monitor_tick(self) -> None:
        k = self.kernel
        if self.member_ok(self.id):
            self.run_monitors()
        k.call_at(k.now + self.monitor_period, self._monitor_tick)

    def run_monitors(self) -> list[Verdict]:
        k = self.kernel
        verdicts = []
        for comp in self.components():
            if not self.member_ok(comp.id):
                continue
            self.apply_leak(comp)
            values = {n: s.value for n, s in comp.store.scalars.items()}
            n_cases = comp.n_cases
            for v in run_monitors(comp, self.memory_budget, k.now):
                k.record("verdict", self.monitor_reporter or self.id, v.subject,
                         v.payload(values=values, cases=n_cases))
                verdicts.append(v)
        return verdicts

    def _clear_links(self) -> None:
        self._succ_outstanding.clear()

    def on_restart_begin(self) -> None:
        self._clear_links()


class ComponentHost(HostBase):
    def __init__(self, component: Component, output_to: str | None = None, bus_latency: VirtualTime = 1):
        super().__init__(component.id, output_to, bus_latency)
        self.component = component

    def components(self) -> list[Component]:
        return [self.component]

    def handle_input(self, msg: Message) -> None:
        k = self.kernel
        seq, *values = msg.payload
        outputs, latency = self.step_member(self.component, values)
        k.set_busy(self.id, k.now + latency)
        dest = self.output_to or msg.sender
        self.emit_later(latency, Message(self.id, dest, MessageKind.OUTPUT, (seq, *outputs)))

    def on_fault(self, target: str, spec: FaultSpec) -> None:
        if spec.kind is FaultKind.CORRUPT_PARAM:
            self.component.store[spec.param].value = spec.value
        elif spec.kind is FaultKind.CRASH:
            self.component.running = False

    def on_restart_done(self) -> None:
        self.component.reinitialize()


class TrafficSource(Process):
    def __init__(self, sid: str, snapshots: Sequence[TrafficSnapshot], target: str,
                 bus_latency: VirtualTime = 1):
        super().__init__(sid)
        self.snapshots = list(snapshots)
        self.target = target
        self.bus_latency = bus_latency

    def demands(self) -> list[tuple[int, VirtualTime]]:
        return [(i, s.t) for i, s in enumerate(self.snapshots)]

    def start(self) -> None:
        for i, snap in enumerate(self.snapshots):
            self.kernel.call_at(snap.t, self._emit, i, snap)

    def _emit(self, seq: int, snap: TrafficSnapshot) -> None:
        self.kernel.send(Message(self.id, self.target, MessageKind.INPUT, (seq, *snap.to_values())),
                         self.bus_latency)


class Boundary(Process):
    def __init__(self, bid: str, demands: Sequence[tuple[int, VirtualTime]], deadline: VirtualTime,
                 function: str):
        super().__init__(bid)
        self.issued = dict(demands)
        self.deadline = deadline
        self.function = function
        self.met: dict[int, tuple[VirtualTime, str]] = {}

    def start(self) -> None:
        for seq, t in self.issued.items():
            self.kernel.call_at(t + self.deadline, self._check, seq)

    def on_message(self, msg: Message) -> None:
        if msg.kind is not MessageKind.OUTPUT or not msg.payload:
            return
        seq = msg.payload[0]
        if seq in self.issued and seq not in self.met:
            self.met[seq] = (self.kernel.now, msg.sender)

    def _check(self, seq: int) -> None:
        k = self.kernel
        issued = self.issued[seq]
        hit = self.met.get(seq)
        if hit is not None:
            k.record("demand", hit[1], self.id, {"seq": seq, "issued": issued, "met": True,
                                                 "latency": hit[0] - issued})
            return
        k.record("demand", "", self.id, {"seq": seq, "issued": issued, "met": False})
        v = Verdict.failure(self.function, Cause.DEADLINE_MISS, k.now)
        k.record("verdict", self.id, v.subject, v.payload(seq=seq))
