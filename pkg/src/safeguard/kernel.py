"""Deterministic discrete-event kernel.

Virtual time is an integer count of simulated milliseconds. Events are
processed in ``(time, insertion sequence)`` order, so two runs of the same
scenario with the same seed produce the same event log byte for byte.

The kernel also owns the fault state of every registered component:
crashes, hangs, bus delays, corrupted outputs, case-base leaks and
parameter corruption are all applied here so that component code never has
to know whether it is being tortured.
"""

from __future__ import annotations

import enum
import heapq
import json
import math
import random
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterable, Iterator

VirtualTime = int


class KernelError(Exception):
    pass


class PastEvent(KernelError):
    pass


class UnknownReceiver(KernelError):
    pass


class UnknownTarget(KernelError):
    pass


class InvalidFault(KernelError, ValueError):
    pass


class CorruptLog(KernelError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class MessageKind(str, enum.Enum):
    INPUT = "Input"
    OUTPUT = "Output"
    PING = "Ping"
    PONG = "Pong"
    PROBE = "Probe"
    PROBE_RESPONSE = "ProbeResponse"
    CONTROL = "Control"


TEST_KINDS = frozenset({MessageKind.PROBE, MessageKind.PROBE_RESPONSE})


@dataclass(frozen=True, slots=True)
class Message:
    sender: str
    receiver: str
    kind: MessageKind
    payload: tuple = ()
    sent_at: VirtualTime = 0
    is_test: bool = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "payload", tuple(self.payload))
        object.__setattr__(self, "is_test", self.kind in TEST_KINDS)


class FaultKind(str, enum.Enum):
    CRASH = "Crash"
    HANG = "Hang"
    DELAY = "Delay"
    CORRUPT_OUTPUT = "CorruptOutput"
    LEAK_GROWTH = "LeakGrowth"
    CORRUPT_PARAM = "CorruptParam"


@dataclass(frozen=True, slots=True)
class FaultSpec:
    """One injected fault.

    Only the fields relevant to ``kind`` are read: ``duration`` for Hang,
    ``extra_latency`` for Delay, ``channel``/``value`` for CorruptOutput,
    ``rate`` (cases per tick) for LeakGrowth and ``param``/``value`` for
    CorruptParam. A Crash fires at ``active_from`` and lasts until the
    component is restarted; ``active_until`` does not revive it.
    """

    target: str
    kind: FaultKind
    active_from: VirtualTime
    active_until: VirtualTime
    duration: VirtualTime = 0
    extra_latency: VirtualTime = 0
    channel: int = 0
    value: float = 0.0
    rate: float = 0.0
    param: str = ""

    def validate(self) -> None:
        if self.active_from < 0:
            raise InvalidFault("active_from must be non-negative")
        if not self.active_from < self.active_until:
            raise InvalidFault("active_from must precede active_until")
        if self.kind is FaultKind.HANG and self.duration <= 0:
            raise InvalidFault("Hang needs a positive duration")
        if self.kind is FaultKind.DELAY and self.extra_latency < 0:
            raise InvalidFault("Delay needs a non-negative extra_latency")
        if self.kind is FaultKind.CORRUPT_OUTPUT and self.channel < 0:
            raise InvalidFault("channel index must be non-negative")
        if self.kind is FaultKind.LEAK_GROWTH and self.rate <= 0:
            raise InvalidFault("LeakGrowth needs a positive rate")
        if self.kind is FaultKind.CORRUPT_PARAM and not self.param:
            raise InvalidFault("CorruptParam needs a parameter name")

    @property
    def window_end(self) -> VirtualTime:
        if self.kind is FaultKind.HANG:
            return min(self.active_from + self.duration, self.active_until)
        return self.active_until

    def active_at(self, t: VirtualTime) -> bool:
        return self.active_from <= t < self.window_end

    def describe(self) -> dict:
        out: dict[str, Any] = {"fault": self.kind.value, "until": self.window_end}
        if self.kind is FaultKind.HANG:
            out["duration"] = self.duration
        elif self.kind is FaultKind.DELAY:
            out["extra_latency"] = self.extra_latency
        elif self.kind is FaultKind.CORRUPT_OUTPUT:
            out["channel"] = self.channel
            out["value"] = self.value
        elif self.kind is FaultKind.LEAK_GROWTH:
            out["rate"] = self.rate
        elif self.kind is FaultKind.CORRUPT_PARAM:
            out["param"] = self.param
            out["value"] = self.value
        return out


@dataclass(frozen=True, slots=True)
class Record:
    time: VirtualTime
    kind: str
    sender: str = ""
    receiver: str = ""
    is_test: bool = False
    payload: Any = ()

    def to_dict(self) -> dict:
        payload = list(self.payload) if isinstance(self.payload, tuple) else self.payload
        return {
            "time": self.time,
            "kind": self.kind,
            "sender": self.sender,
            "receiver": self.receiver,
            "is_test": self.is_test,
            "payload": payload,
        }

    def to_json(self) -> str:
        # top-level field order is fixed; payload dicts are key-sorted
        d = self.to_dict()
        parts = [
            f'"{k}":{json.dumps(d[k], sort_keys=True, separators=(",", ":"), allow_nan=False)}'
            for k in ("time", "kind", "sender", "receiver", "is_test", "payload")
        ]
        return "{" + ",".join(parts) + "}"

    @classmethod
    def from_dict(cls, d: dict) -> Record:
        payload = d["payload"]
        if isinstance(payload, list):
            payload = tuple(payload)
        return cls(d["time"], d["kind"], d["sender"], d["receiver"], d["is_test"], payload)


_FIELDS = ("time", "kind", "sender", "receiver", "is_test", "payload")


class EventLog:
    """Ordered, append-only sequence of records."""

    def __init__(self, records: Iterable[Record] = (), seed: int | None = None):
        self.records: list[Record] = list(records)
        self.seed = seed

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[Record]:
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def __eq__(self, other) -> bool:
        return isinstance(other, EventLog) and self.records == other.records

    def of_kind(self, *kinds: str) -> list[Record]:
        return [r for r in self.records if r.kind in kinds]

    def to_jsonl(self) -> str:
        return "".join(r.to_json() + "\n" for r in self.records)

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_jsonl())

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> EventLog:
        records = []
        last_time = -1
        for lineno, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorruptLog(lineno, f"unparseable record ({exc.msg})") from None
            if not isinstance(d, dict) or tuple(d) != _FIELDS:
                raise CorruptLog(lineno, "record does not have the expected fields")
            if not isinstance(d["time"], int) or d["time"] < last_time:
                raise CorruptLog(lineno, "record time out of order")
            last_time = d["time"]
            records.append(Record.from_dict(d))
        return cls(records)

    @classmethod
    def read(cls, path) -> EventLog:
        with open(path, encoding="utf-8") as fh:
            return cls.from_lines(fh.read().split("\n"))


class Process:
    """Something that lives in the kernel and receives messages."""

    def __init__(self, pid: str):
        self.id = pid
        self.kernel: Kernel | None = None

    def attach(self, kernel: Kernel) -> None:
        self.kernel = kernel

    def hosted_ids(self) -> tuple[str, ...]:
        # extra fault targets this process hosts (redundancy members)
        return ()

    def start(self) -> None:
        pass

    def on_message(self, msg: Message) -> None:
        pass

    def on_fault(self, target: str, spec: FaultSpec) -> None:
        pass

    def on_restart_begin(self) -> None:
        pass

    def on_restart_done(self) -> None:
        pass


class Kernel:
    def __init__(self, seed: int = 0, jitter: VirtualTime = 0):
        self.seed = seed
        self.rng = random.Random(seed)
        self.jitter = jitter
        self.now: VirtualTime = 0
        self._queue: list = []
        self._seq = 0
        self._records: list[Record] = []
        self._procs: dict[str, Process] = {}
        self._owner: dict[str, str] = {}
        self._faults: dict[str, list[FaultSpec]] = {}
        self._crashed: set[str] = set()
        self._down: set[str] = set()
        self._busy_until: dict[str, VirtualTime] = {}
        self._backlog: dict[str, deque] = {}
        self._leak_applied: dict[int, int] = {}

    # -- registry --------------------------------------------------------

    def register(self, proc: Process) -> Process:
        if proc.id in self._owner:
            raise KernelError(f"duplicate component id {proc.id!r}")
        self._procs[proc.id] = proc
        self._owner[proc.id] = proc.id
        for hid in proc.hosted_ids():
            if hid in self._owner:
                raise KernelError(f"duplicate component id {hid!r}")
            self._owner[hid] = proc.id
        proc.attach(self)
        return proc

    def process(self, pid: str) -> Process:
        return self._procs[pid]

    @property
    def processes(self) -> dict[str, Process]:
        return dict(self._procs)

    def start(self) -> None:
        for proc in list(self._procs.values()):
            proc.start()

    # -- scheduling -------------------------------------------------------

    def _push(self, time: VirtualTime, action: tuple) -> None:
        heapq.heappush(self._queue, (time, self._seq, action))
        self._seq += 1

    def schedule(self, time: VirtualTime, msg: Message) -> None:
        if time < self.now:
            raise PastEvent(f"event at {time} is before now={self.now}")
        if msg.receiver not in self._procs:
            raise UnknownReceiver(msg.receiver)
        self._push(time, ("deliver", msg))

    def call_at(self, time: VirtualTime, fn: Callable, *args) -> None:
        if time < self.now:
            raise PastEvent(f"timer at {time} is before now={self.now}")
        self._push(time, ("call", fn, args))

    def send(self, msg: Message, latency: VirtualTime = 0) -> None:
        if latency < 0:
            raise ValueError("latency must be non-negative")
        if msg.receiver not in self._procs:
            raise UnknownReceiver(msg.receiver)
        sender = msg.sender
        if sender in self._owner and self.is_unavailable(sender):
            self.record("drop", sender, msg.receiver, {"reason": "sender_down", "message": msg.kind.value})
            return
        hang_end = self.hang_until(sender)
        if hang_end is not None:
            self.call_at(hang_end, self.send, msg, latency)
            return
        msg = replace(msg, sent_at=self.now)
        total = latency + self.extra_latency(msg.receiver)
        if self.jitter:
            total += self.rng.randint(0, self.jitter)
        self.schedule(self.now + total, msg)

    def run_until(self, t_end: VirtualTime) -> EventLog:
        if t_end < self.now:
            raise PastEvent(f"t_end={t_end} is before now={self.now}")
        q = self._queue
        while q and q[0][0] < t_end:
            time, _, action = heapq.heappop(q)
            self.now = time
            if action[0] == "deliver":
                self._deliver(action[1])
            else:
                action[1](*action[2])
        self.now = t_end
        return self.log

    @property
    def log(self) -> EventLog:
        return EventLog(self._records, self.seed)

    def record(self, kind: str, sender: str = "", receiver: str = "", payload: Any = None,
               is_test: bool = False) -> Record:
        rec = Record(self.now, kind, sender, receiver, is_test, {} if payload is None else payload)
        self._records.append(rec)
        return rec

    # -- delivery ---------------------------------------------------------

    def _deliver(self, msg: Message) -> None:
        rid = msg.receiver
        if self.is_unavailable(rid):
            self.record("drop", msg.sender, rid, {"reason": "receiver_down", "message": msg.kind.value})
            return
        backlog = self._backlog.get(rid)
        if backlog:
            backlog.append(msg)
            return
        resume = self._resume_time(rid)
        if resume is not None:
            self._backlog.setdefault(rid, deque()).append(msg)
            self.call_at(resume, self._drain, rid)
            return
        self._hand_over(msg)

    def _hand_over(self, msg: Message) -> None:
        self._records.append(Record(self.now, msg.kind.value, msg.sender, msg.receiver, msg.is_test,
                                    msg.payload))
        self._procs[msg.receiver].on_message(msg)

    def _resume_time(self, pid: str) -> VirtualTime | None:
        resume = None
        hang_end = self.hang_until(pid)
        if hang_end is not None:
            resume = hang_end
        busy = self._busy_until.get(pid, 0)
        if busy > self.now:
            resume = busy if resume is None else max(resume, busy)
        return resume

    def _drain(self, pid: str) -> None:
        backlog = self._backlog.get(pid)
        while backlog:
            if self.is_unavailable(pid):
                for msg in backlog:
                    self.record("drop", msg.sender, pid, {"reason": "receiver_down", "message": msg.kind.value})
                backlog.clear()
                return
            resume = self._resume_time(pid)
            if resume is not None:
                self.call_at(resume, self._drain, pid)
                return
            self._hand_over(backlog.popleft())

    def set_busy(self, pid: str, until: VirtualTime) -> None:
        self._busy_until[pid] = max(self._busy_until.get(pid, 0), until)

    def busy_until(self, pid: str) -> VirtualTime:
        return self._busy_until.get(pid, 0)

    # -- faults -----------------------------------------------------------

    def inject_fault(self, spec: FaultSpec) -> None:
        spec.validate()
        if spec.target not in self._owner:
            raise UnknownTarget(spec.target)
        if spec.active_from < self.now:
            raise PastEvent(f"fault at {spec.active_from} is before now={self.now}")
        self._faults.setdefault(spec.target, []).append(spec)
        self.call_at(spec.active_from, self._activate, spec)
        if spec.kind not in (FaultKind.CRASH, FaultKind.CORRUPT_PARAM):
            self.call_at(spec.window_end, self._deactivate, spec)

    def _activate(self, spec: FaultSpec) -> None:
        self.record("fault", "", spec.target, spec.describe())
        if spec.kind is FaultKind.CRASH:
            self._crashed.add(spec.target)
            if spec.target in self._procs:
                self._backlog.pop(spec.target, None)
        self._procs[self._owner[spec.target]].on_fault(spec.target, spec)

    def _deactivate(self, spec: FaultSpec) -> None:
        self.record("fault_end", "", spec.target, {"fault": spec.kind.value})

    def _active(self, target: str, kind: FaultKind) -> list[FaultSpec]:
        return [f for f in self._faults.get(target, ()) if f.kind is kind and f.active_at(self.now)]

    def is_crashed(self, cid: str) -> bool:
        return cid in self._crashed

    def is_down(self, cid: str) -> bool:
        return cid in self._down

    def is_unavailable(self, cid: str) -> bool:
        owner = self._owner.get(cid, cid)
        return cid in self._crashed or cid in self._down or owner in self._crashed or owner in self._down

    def hang_until(self, cid: str) -> VirtualTime | None:
        ends = [f.window_end for f in self._active(cid, FaultKind.HANG)]
        return max(ends) if ends else None

    def is_hung(self, cid: str) -> bool:
        return self.hang_until(cid) is not None

    def extra_latency(self, cid: str) -> VirtualTime:
        return sum(f.extra_latency for f in self._active(cid, FaultKind.DELAY))

    def corruptions(self, cid: str) -> list[tuple[int, float]]:
        return [(f.channel, f.value) for f in self._active(cid, FaultKind.CORRUPT_OUTPUT)]

    def corrupt_outputs(self, cid: str, values: list) -> list:
        out = list(values)
        for channel, value in self.corruptions(cid):
            if channel < len(out):
                out[channel] = value
        return out

    def leak_due(self, cid: str) -> int:
        """Number of leaked cases accrued for ``cid`` since the last call."""
        due = 0
        for f in self._faults.get(cid, ()):
            if f.kind is not FaultKind.LEAK_GROWTH or self.now < f.active_from:
                continue
            elapsed = min(self.now, f.active_until) - f.active_from
            total = math.floor(f.rate * elapsed + 1e-9)
            key = id(f)
            due += total - self._leak_applied.get(key, 0)
            self._leak_applied[key] = total
        return due

    # -- restart ----------------------------------------------------------

    def restart(self, pid: str, duration: VirtualTime, by: str = "") -> None:
        if pid not in self._procs:
            raise UnknownTarget(pid)
        self._down.add(pid)
        self._backlog.pop(pid, None)
        self.record("restart", by, pid, {"duration": duration})
        self._procs[pid].on_restart_begin()
        self.call_at(self.now + duration, self._finish_restart, pid, by)

    def _finish_restart(self, pid: str, by: str) -> None:
        proc = self._procs[pid]
        self._down.discard(pid)
        self._crashed.discard(pid)
        for hid in proc.hosted_ids():
            self._crashed.discard(hid)
        self._busy_until.pop(pid, None)
        proc.on_restart_done()
        self.record("restart_done", by, pid, {})

    def clear_crash(self, cid: str) -> None:
        self._crashed.discard(cid)
