"""Redundant arrangements of the adaptive decision.

Each group is a single kernel process hosting its members, so members of a
group are stepped sequentially in member order within one tick. Members are
still individual fault targets.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

from .component import Component, StateImage
from .kernel import FaultKind, FaultSpec, Message, MessageKind, VirtualTime
from .runtime import HostBase
from .verdicts import Cause, Verdict


class RedundancyError(Exception):
    pass


class BothFailed(RedundancyError):
    pass


class NoStandby(RedundancyError):
    pass


class ArityMismatch(RedundancyError, ValueError):
    pass


class RedundancyMode(str, enum.Enum):
    ACTIVE_HOT = "ActiveHot"
    PASSIVE_COLD = "PassiveCold"
    TMR = "TMR"
    REINITIALIZED_COPY = "ReinitializedCopy"


_ARITY = {
    RedundancyMode.ACTIVE_HOT: 2,
    RedundancyMode.PASSIVE_COLD: 2,
    RedundancyMode.TMR: 3,
    RedundancyMode.REINITIALIZED_COPY: 2,
}


@dataclass
class RedundancyGroup:
    gid: str
    mode: RedundancyMode
    members: list[str]
    vote_tolerance: float | Sequence[float] = 0.0
    sync_duration: VirtualTime = 0
    reinit_period: VirtualTime = 0
    divergence_threshold: float | Sequence[float] | None = None

    def __post_init__(self):
        self.mode = RedundancyMode(self.mode)
        self.members = list(self.members)
        if len(self.members) != _ARITY[self.mode]:
            raise ValueError(f"{self.mode.value} needs {_ARITY[self.mode]} members, got {len(self.members)}")
        if len(set(self.members)) != len(self.members):
            raise ValueError("group members must be pairwise distinct")
        tol = [self.vote_tolerance] if isinstance(self.vote_tolerance, (int, float)) else self.vote_tolerance
        if any(e < 0 for e in tol):
            raise ValueError("vote tolerance must be non-negative")
        if self.sync_duration < 0 or self.reinit_period < 0:
            raise ValueError("durations must be non-negative")

    def tolerance(self, channel: int) -> float:
        return _per_channel(self.vote_tolerance, channel, 0.0)

    def threshold(self, channel: int) -> float:
        return _per_channel(self.divergence_threshold, channel, math.inf)


def _per_channel(value, channel: int, default: float) -> float:
    if value is None:
        return default
    if isinstance(value, (int, float)):
        return float(value)
    return float(value[channel]) if channel < len(value) else default


# -- voting ----------------------------------------------------------------


@dataclass(frozen=True)
class Vote:
    output: list[float] | None
    dissenters: tuple[int, ...]

    @property
    def failed(self) -> bool:
        return self.output is None


def _vote_channel(values: list[float | None], eps: float) -> tuple[float | None, set[int]]:
    pairs = []
    for i in range(3):
        for j in range(i + 1, 3):
            a, b = values[i], values[j]
            if a is not None and b is not None and abs(a - b) <= eps:
                pairs.append((abs(a - b), min(a, b), max(a, b), i, j))
    if not pairs:
        return None, set()
    agreeing = {i for p in pairs for i in p[3:]}
    # closest pair wins; ties broken on the values so member order is irrelevant
    _, lo, hi, _, _ = min(pairs, key=lambda p: p[:3])
    voted = lo if lo == hi else (lo + hi) / 2
    return voted, {i for i in range(3) if i not in agreeing}


def tmr_vote(outputs: Sequence[Sequence[float] | None], eps: float | Sequence[float]) -> Vote:
    """2-of-3 vote per channel; a member output of ``None`` means it produced nothing."""
    if len(outputs) != 3:
        raise ArityMismatch(f"TMR votes over three outputs, got {len(outputs)}")
    present = [o for o in outputs if o is not None]
    arities = {len(o) for o in present}
    if len(arities) > 1:
        raise ArityMismatch(f"member outputs have arities {sorted(arities)}")
    if not present:
        return Vote(None, (0, 1, 2))
    width = arities.pop()
    voted, dissent = [], {i for i, o in enumerate(outputs) if o is None}
    for ch in range(width):
        value, out = _vote_channel([None if o is None else o[ch] for o in outputs], _per_channel(eps, ch, 0.0))
        if value is None:
            return Vote(None, tuple(range(3)))
        voted.append(value)
        dissent |= out
    return Vote(voted, tuple(sorted(dissent)))


# -- hosts -----------------------------------------------------------------


class GroupHost(HostBase):
    """Kernel process for a redundancy group; subclasses implement one mode."""

    def __init__(self, group: RedundancyGroup, members: Sequence[Component], output_to: str | None = None,
                 bus_latency: VirtualTime = 1):
        super().__init__(group.gid, output_to, bus_latency)
        if [m.id for m in members] != group.members:
            raise ValueError("member components do not match the group definition")
        self.group = group
        self.members = list(members)
        self.producer = self.members[0].id

    def hosted_ids(self) -> tuple[str, ...]:
        return tuple(self.group.members)

    def components(self) -> list[Component]:
        return self.members

    def member(self, cid: str) -> Component:
        for m in self.members:
            if m.id == cid:
                return m
        raise KeyError(cid)

    def alive(self) -> bool:
        return any(self.member_ok(m.id) for m in self.members)

    def on_fault(self, target: str, spec: FaultSpec) -> None:
        comps = self.members if target == self.id else [self.member(target)]
        for comp in comps:
            if spec.kind is FaultKind.CORRUPT_PARAM:
                comp.store[spec.param].value = spec.value
            elif spec.kind is FaultKind.CRASH:
                comp.running = False

    def on_restart_done(self) -> None:
        for m in self.members:
            m.reinitialize()
        self.producer = self.members[0].id

    def dest(self, msg: Message) -> str:
        return self.output_to or msg.sender

    def emit(self, msg: Message, sender: str, latency: VirtualTime, seq, outputs) -> None:
        self.kernel.set_busy(self.id, self.kernel.now + latency)
        self.emit_later(latency, Message(sender, self.dest(msg), MessageKind.OUTPUT, (seq, *outputs)))

    def switchover(self, to: str, failure_time: VirtualTime, takeover_time: VirtualTime, **extra) -> None:
        self.kernel.record("switchover", self.producer, to, {
            "from": self.producer, "to": to, "failure_time": failure_time,
            "takeover_time": takeover_time, "gap": takeover_time - failure_time, **extra,
        })
        self.producer = to

    def fail(self, cause: Cause, **extra) -> None:
        self.verdict(Verdict.defect(self.id, cause, self.kernel.now), **extra)
        self.escalate(cause)


class ActiveHotHost(GroupHost):
    def duplex_step(self, inputs: Sequence[float], now: VirtualTime) -> tuple[list, str, VirtualTime]:
        results = {}
        for m in self.members:
            if self.member_ok(m.id):
                results[m.id] = self.step_member(m, inputs)
        primary, standby = self.group.members
        for cid in (primary, standby):
            if cid in results:
                outputs, latency = results[cid]
                if cid != self.producer:
                    self.switchover(cid, now, now)
                return outputs, cid, latency
        raise BothFailed(self.id)

    def handle_input(self, msg: Message) -> None:
        seq, *values = msg.payload
        try:
            outputs, producer, latency = self.duplex_step(values, self.kernel.now)
        except BothFailed:
            self.fail(Cause.BOTH_FAILED, seq=seq)
            return
        self.emit(msg, producer, latency, seq, outputs)


class PassiveColdHost(GroupHost):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._reset_state()

    def _reset_state(self) -> None:
        self.active = 0
        self.last_image: StateImage | None = None
        self.syncing_until: VirtualTime | None = None
        self.buffer: list[Message] = []

    def primary(self) -> Component:
        return self.members[self.active]

    def on_restart_done(self) -> None:
        super().on_restart_done()
        self._reset_state()

    def on_fault(self, target: str, spec: FaultSpec) -> None:
        super().on_fault(target, spec)
        # a crash of the active member is noticed at once, a hang at the next input
        if spec.kind is FaultKind.CRASH and target == self.members[self.active].id and self.active == 0 \
                and self.syncing_until is None:
            try:
                self.passive_failover(self.kernel.now)
            except NoStandby:
                self.fail(Cause.BOTH_FAILED)

    def handle_input(self, msg: Message) -> None:
        if self.syncing_until is not None:
            self.buffer.append(msg)
            return
        active = self.members[self.active]
        if not self.member_ok(active.id):
            try:
                self.passive_failover(self.kernel.now)
            except NoStandby:
                self.fail(Cause.BOTH_FAILED, seq=msg.payload[0])
                return
            self.buffer.append(msg)
            return
        seq, *values = msg.payload
        outputs, latency = self.step_member(active, values)
        if self.active == 0:
            self.last_image = active.snapshot()
        self.emit(msg, active.id, latency, seq, outputs)

    def passive_failover(self, now: VirtualTime) -> None:
        if self.active != 0 or not self.member_ok(self.members[1].id):
            raise NoStandby(self.id)
        standby = self.members[1]
        restored = self.last_image is not None
        if restored:
            standby.restore(self.last_image)
        else:
            standby.reinitialize()
        self.active = 1
        sync = self.group.sync_duration
        self.syncing_until = now + sync
        self.switchover(standby.id, now, now + sync, restored=restored)
        self.kernel.call_at(now + sync, self._finish_sync)

    def _finish_sync(self) -> None:
        self.syncing_until = None
        buffered, self.buffer = self.buffer, []
        for msg in buffered:
            self.handle_input(msg)


class TMRHost(GroupHost):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.producer = self.id

    def on_restart_done(self) -> None:
        super().on_restart_done()
        self.producer = self.id

    def handle_input(self, msg: Message) -> None:
        seq, *values = msg.payload
        outputs: list = []
        latency = 0
        for m in self.members:
            if self.member_ok(m.id):
                out, lat = self.step_member(m, values)
                outputs.append(out)
                latency = max(latency, lat)
            else:
                outputs.append(None)
        vote = tmr_vote(outputs, self.group.vote_tolerance)
        now = self.kernel.now
        if vote.failed:
            self.fail(Cause.VOTE_FAILURE, seq=seq)
            return
        for i in vote.dissenters:
            self.verdict(Verdict.defect(self.group.members[i], Cause.VOTE_DISSENT, now), seq=seq)
        self.emit(msg, self.id, latency, seq, vote.output)


class ReinitializedCopyHost(GroupHost):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.last_reinit: VirtualTime | None = None

    def on_restart_done(self) -> None:
        super().on_restart_done()
        self.last_reinit = None

    def reinit_copy_step(self, inputs: Sequence[float], now: VirtualTime):
        primary, copy = self.members
        period = self.group.reinit_period
        if self.last_reinit is None or now - self.last_reinit >= period:
            copy.reset_learning()
            self.last_reinit = now
        p_out = c_out = None
        latency = 0
        if self.member_ok(primary.id):
            p_out, latency = self.step_member(primary, inputs)
        if self.member_ok(copy.id):
            c_out, c_lat = self.step_member(copy, inputs)
            if p_out is None:
                latency = c_lat
        if p_out is None or c_out is None:
            return p_out, c_out, None, latency
        divergence = [abs(a - b) for a, b in zip(p_out, c_out)]
        return p_out, c_out, divergence, latency

    def handle_input(self, msg: Message) -> None:
        k = self.kernel
        seq, *values = msg.payload
        p_out, c_out, divergence, latency = self.reinit_copy_step(values, k.now)
        if divergence is not None:
            k.record("divergence", self.id, "", {"seq": seq, "divergence": divergence})
            if any(d > self.group.threshold(ch) for ch, d in enumerate(divergence)):
                self.fail(Cause.DIVERGENCE, seq=seq, divergence=divergence)
        primary, copy = self.group.members
        if p_out is not None:
            self.emit(msg, primary, latency, seq, p_out)
        elif c_out is not None:
            if self.producer != copy:
                self.switchover(copy, k.now, k.now)
            self.emit(msg, copy, latency, seq, c_out)
        else:
            self.fail(Cause.BOTH_FAILED, seq=seq)


HOSTS = {
    RedundancyMode.ACTIVE_HOT: ActiveHotHost,
    RedundancyMode.PASSIVE_COLD: PassiveColdHost,
    RedundancyMode.TMR: TMRHost,
    RedundancyMode.REINITIALIZED_COPY: ReinitializedCopyHost,
}


def build_group(group: RedundancyGroup, members: Sequence[Component], output_to: str | None = None,
                bus_latency: VirtualTime = 1) -> GroupHost:
    return HOSTS[group.mode](group, members, output_to, bus_latency)
