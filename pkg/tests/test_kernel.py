import random

import pytest
from hypothesis import given, settings, strategies as st

from safeguard.kernel import (CorruptLog, EventLog, FaultKind, FaultSpec, InvalidFault, Kernel, Message,
                              MessageKind, PastEvent, Process, Record, UnknownReceiver, UnknownTarget)
from helpers import functional_outputs, supervised_system


class Sink(Process):
    def __init__(self, pid):
        super().__init__(pid)
        self.got = []

    def on_message(self, msg):
        self.got.append((self.kernel.now, msg.payload))


class Echo(Process):
    """Answers every Ping with a Pong."""

    def on_message(self, msg):
        if msg.kind is MessageKind.PING:
            self.kernel.send(Message(self.id, msg.sender, MessageKind.PONG, msg.payload), 1)


def kernel_with(*pids, seed=0):
    k = Kernel(seed)
    procs = {p: k.register(Sink(p)) for p in pids}
    return k, procs


def msg(payload=(), kind=MessageKind.INPUT, sender="a", receiver="b"):
    return Message(sender, receiver, kind, payload)


def test_schedule_now_runs_after_queued_same_tick_events():
    k, p = kernel_with("a", "b")
    k.schedule(0, msg(("first",)))
    k.schedule(0, msg(("second",)))
    k.run_until(1)
    assert [x for _, x in p["b"].got] == [("first",), ("second",)]


def test_equal_time_fifo():
    k, p = kernel_with("a", "b")
    k.schedule(5, msg(("A",)))
    k.schedule(5, msg(("B",)))
    k.run_until(10)
    assert p["b"].got == [(5, ("A",)), (5, ("B",))]


def test_schedule_in_past_rejected():
    k, _ = kernel_with("a", "b")
    k.run_until(10)
    with pytest.raises(PastEvent):
        k.schedule(9, msg())
    with pytest.raises(PastEvent):
        k.run_until(5)


def _random_run(seed):
    k, _ = kernel_with("a", "b", "c", seed=seed)
    for i in range(1000):
        rcv = k.rng.choice("abc")
        k.schedule(k.rng.randint(0, 500), Message("a", rcv, MessageKind.INPUT, (i, k.rng.random())))
    return k.run_until(1000).to_jsonl()


def test_replay_same_seed_byte_identical():
    assert _random_run(3) == _random_run(3)
    assert _random_run(3) != _random_run(4)


def test_send_zero_latency_same_tick():
    k, p = kernel_with("a", "b")
    k.call_at(7, k.send, msg(("x",)), 0)
    k.run_until(8)
    assert p["b"].got == [(7, ("x",))]


def test_delay_fault_adds_to_latency():
    k, p = kernel_with("a", "b")
    k.inject_fault(FaultSpec("b", FaultKind.DELAY, 0, 100, extra_latency=5))
    k.call_at(20, k.send, msg(("x",)), 10)
    k.run_until(100)
    assert p["b"].got == [(35, ("x",))]


def test_send_to_unknown_receiver():
    k, _ = kernel_with("a")
    with pytest.raises(UnknownReceiver):
        k.send(msg(receiver="nobody"), 1)


def test_crashed_receiver_drops_and_logs():
    k, p = kernel_with("a", "b")
    k.inject_fault(FaultSpec("b", FaultKind.CRASH, 10, 20))
    k.call_at(15, k.send, msg(("lost",)), 1)
    k.call_at(30, k.send, msg(("still lost",)), 1)    # a crash outlives active_until
    log = k.run_until(100)
    assert p["b"].got == []
    drops = log.of_kind("drop")
    assert [d.time for d in drops] == [16, 31]
    assert all(d.payload["reason"] == "receiver_down" for d in drops)


def test_crashed_sender_emits_nothing():
    k, _ = kernel_with("a", "b")
    k.inject_fault(FaultSpec("a", FaultKind.CRASH, 10, 20))
    k.call_at(50, k.send, msg(("x",)), 1)
    log = k.run_until(100)
    assert not log.of_kind("Input")
    assert log.of_kind("drop")[0].payload["reason"] == "sender_down"


def test_restart_revives_crashed_component():
    k, p = kernel_with("a", "b")
    k.inject_fault(FaultSpec("b", FaultKind.CRASH, 10, 11))
    k.call_at(20, k.restart, "b", 30, "test")
    k.call_at(60, k.send, msg(("back",)), 1)
    log = k.run_until(100)
    assert p["b"].got == [(61, ("back",))]
    assert [r.kind for r in log if r.kind.startswith("restart")] == ["restart", "restart_done"]


def test_hang_defers_pongs_until_window_ends():
    k = Kernel()
    k.register(Sink("g"))
    k.register(Echo("e"))
    k.inject_fault(FaultSpec("e", FaultKind.HANG, 100, 1000, duration=50))
    for t in (90, 110, 160):
        k.call_at(t, k.send, Message("g", "e", MessageKind.PING, (t,)), 1)
    log = k.run_until(300)
    pongs = [(r.time, r.payload[0]) for r in log.of_kind("Pong")]
    # 110's ping waits out the hang and is answered right after it
    assert pongs == [(92, 90), (151, 110), (162, 160)]
    assert all(not 100 <= r.time < 150 for r in log.of_kind("Pong"))


def test_corrupt_output_replaces_channel():
    faults = [dict(target="decider", kind=FaultKind.CORRUPT_OUTPUT, active_from=1000, active_until=2000,
                   channel=0, value=999.0)]
    k, _, _ = supervised_system(faults=faults, samples=30)
    outs = functional_outputs(k.run_until(3000))
    corrupted = [p for t, p in outs if p[1] == 999.0]
    assert len(corrupted) == 10
    assert all(1000 <= t < 2100 for t, p in outs if p[1] == 999.0)


def test_fault_validation():
    k, _ = kernel_with("a")
    with pytest.raises(UnknownTarget):
        k.inject_fault(FaultSpec("zz", FaultKind.CRASH, 0, 1))
    with pytest.raises(InvalidFault):
        k.inject_fault(FaultSpec("a", FaultKind.CRASH, 5, 5))
    with pytest.raises(InvalidFault):
        k.inject_fault(FaultSpec("a", FaultKind.HANG, 0, 10))


def test_run_until_zero_is_empty():
    assert len(Kernel().run_until(0)) == 0


def test_prefix_equality():
    def run(splits):
        k, _, _ = supervised_system(samples=20, seed=5)
        for t in splits:
            k.run_until(t)
        return k.log.to_jsonl()

    whole = run([1500])
    assert run([700, 1500]) == whole
    assert whole.startswith(run([700]))


def test_log_roundtrip(tmp_path):
    k, _, _ = supervised_system(samples=10)
    log = k.run_until(1200)
    path = tmp_path / "events.jsonl"
    log.write(path)
    again = EventLog.read(path)
    assert again == log
    assert again.to_jsonl() == path.read_text()


def test_field_order_is_fixed():
    line = Record(3, "x", "a", "b", False, {"z": 1, "a": 2}).to_json()
    assert line == '{"time":3,"kind":"x","sender":"a","receiver":"b","is_test":false,"payload":{"a":2,"z":1}}'


def test_corrupt_log_reports_line():
    good = Record(1, "x").to_json()
    with pytest.raises(CorruptLog) as exc:
        EventLog.from_lines([good, good, good[:-5]])
    assert exc.value.line == 3
    with pytest.raises(CorruptLog) as exc:
        EventLog.from_lines([Record(5, "x").to_json(), Record(4, "x").to_json()])
    assert exc.value.line == 2


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 200), st.integers(0, 30), st.integers(0, 20)), min_size=1, max_size=40),
       st.integers(0, 10))
def test_causality_and_total_order(sends, jitter):
    k = Kernel(seed=1, jitter=jitter)
    k.register(Sink("a"))
    k.register(Sink("b"))
    k.inject_fault(FaultSpec("b", FaultKind.DELAY, 50, 120, extra_latency=7))
    for i, (t, latency, _) in enumerate(sends):
        k.call_at(t, k.send, Message("a", "b", MessageKind.INPUT, (i, latency)), latency)
    log = k.run_until(1000)
    times = [r.time for r in log]
    assert times == sorted(times)
    sent = {i: t for i, (t, _, _) in enumerate(sends)}
    for r in log.of_kind("Input"):
        i, latency = r.payload
        assert r.time >= sent[i] + latency


def test_rng_is_single_stream():
    a, b = Kernel(11), Kernel(11)
    assert [a.rng.random() for _ in range(5)] == [b.rng.random() for _ in range(5)]
    assert random.Random(11).random() == Kernel(11).rng.random()
