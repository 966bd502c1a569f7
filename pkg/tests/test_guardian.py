import pytest

from safeguard.component import CaseBase, Forgetting
from safeguard.guardian import (Band, DuplicateMember, Guardian, GuardianConfig, Mode, TestProbe, UnknownProbeId,
                                filter_outbound, run_monitors, watchdog_check)
from safeguard.kernel import FaultKind, FaultSpec, Kernel, Message, MessageKind
from safeguard.component import PassThrough
from safeguard.overtake import OvertakeDecision, Phase, TrafficSnapshot, no_pullout_into_occupied_lane
from safeguard.runtime import ComponentHost
from safeguard.verdicts import Cause, VerdictKind
from helpers import functional_outputs, steady_traffic, supervised_system

FREE = dict(ego_speed=30.0, lead_gap=40.0, lead_speed=24.0, adjacent_occupied=False, rear_gap=120.0,
            rear_closing_speed=3.0)


def verdicts(log, cause=None, kind=None):
    out = [r for r in log.of_kind("verdict")]
    if cause is not None:
        out = [r for r in out if r.payload["cause"] == cause]
    if kind is not None:
        out = [r for r in out if r.payload["verdict"] == kind]
    return out


def crash(target="decider", at=100):
    return FaultSpec(target, FaultKind.CRASH, at, at + 1)


def guardian_pings(log):
    return [r for r in log.of_kind("Ping") if r.sender == "guardian"]


def test_pings_are_periodic():
    k, g, _ = supervised_system(samples=5)
    log = k.run_until(450)
    assert [r.payload[0] for r in guardian_pings(log)] == [0, 100, 200, 300, 400]


def test_healthy_component_clears_outstanding():
    k, g, _ = supervised_system(samples=5)
    k.run_until(401)
    assert g.state.outstanding_pings == {"decider": 400}
    log = k.run_until(450)
    assert g.state.outstanding_pings == {}
    assert not verdicts(log, kind="Defect")
    pongs = log.of_kind("Pong")
    assert all(r.time == r.payload[0] + 2 for r in pongs)    # one bus hop each way


def test_two_supervised_components():
    k = Kernel()
    g = k.register(Guardian("guardian", GuardianConfig(), "a", "a", supervised=["a", "b"]))
    k.register(ComponentHost(PassThrough("a")))
    k.register(ComponentHost(PassThrough("b")))
    k.start()
    log = k.run_until(250)
    assert sorted(r.receiver for r in guardian_pings(log)) == ["a", "a", "a", "b", "b", "b"]


def test_evaluate_deadlines_nothing_outstanding():
    k, g, _ = supervised_system(samples=2)
    assert g.evaluate_deadlines(0) == []


def test_crash_detected_at_deadline():
    k, g, _ = supervised_system(faults=[crash(at=100)], samples=10)
    log = k.run_until(1000)
    [v] = verdicts(log, cause="MissedPong")
    assert (v.time, v.receiver, v.payload["verdict"]) == (120, "decider", "Defect")


def test_hang_late_pong_ignored():
    hang = FaultSpec("decider", FaultKind.HANG, 100, 1000, duration=50)
    k, g, _ = supervised_system(faults=[hang], samples=10)
    log = k.run_until(1000)
    assert [v.time for v in verdicts(log, cause="MissedPong")] == [120]
    # the pong does arrive once the hang ends, after the restart was already ordered
    assert log.of_kind("restart")[0].time == 120
    assert g.state.restarts_used == 1


def test_failover_output_uninterrupted():
    k, g, _ = supervised_system(faults=[crash(at=1000)], samples=40)
    log = k.run_until(4000)
    outs = [r for r in log.of_kind("Output") if r.receiver == "boundary"]
    assert [r.payload[0] for r in outs] == list(range(40))
    producers = [r.sender for r in outs]
    assert "fallback" in producers and producers[-1] == "decider"
    assert not verdicts(log, kind="Failure")
    modes = [r.payload["mode"] for r in log.of_kind("mode")]
    assert modes == ["Failover", "Normal"]


def test_no_failover_leaves_gap():
    cfg = GuardianConfig(failover_target=None, restart_duration=300)
    k, g, _ = supervised_system(cfg, faults=[crash(at=1000)], samples=40)
    log = k.run_until(4000)
    failures = verdicts(log, cause="DeadlineMiss", kind="Failure")
    assert failures
    served = {r.payload[0] for r in log.of_kind("Output") if r.receiver == "boundary"}
    missed = sorted(set(range(39)) - served)
    assert missed[0] == 10 and len(missed) == len(failures)
    assert [r.payload["mode"] for r in log.of_kind("mode")] == ["Restarting", "Normal"]


def test_zero_restart_budget_goes_permanent_failover():
    cfg = GuardianConfig(failover_target="fallback", max_restarts=0)
    k, g, _ = supervised_system(cfg, faults=[crash(at=1000)], samples=40)
    log = k.run_until(4000)
    assert not log.of_kind("restart")
    assert g.permanent_failover and g.mode is Mode.FAILOVER
    senders = {r.sender for r in log.of_kind("Output") if r.receiver == "boundary" and r.payload[0] > 11}
    assert senders == {"fallback"}
    assert not verdicts(log, kind="Failure")


def test_exhausted_budget_without_failover_is_failure():
    cfg = GuardianConfig(failover_target=None, max_restarts=0)
    k, g, _ = supervised_system(cfg, faults=[crash(at=500)], samples=20)
    log = k.run_until(2000)
    assert verdicts(log, cause="RestartBudgetExhausted", kind="Failure")


def test_restarts_never_exceed_budget():
    crashes = [crash(at=t) for t in (500, 1500, 2500, 3500, 4500)]
    k, g, _ = supervised_system(GuardianConfig(failover_target="fallback", max_restarts=3), faults=crashes,
                                samples=60)
    log = k.run_until(6000)
    assert len(log.of_kind("restart")) == 3
    assert g.state.restarts_used == 3 and g.permanent_failover


def cascade_system(n, crash_at=None, flat=False):
    k = Kernel()
    ids = [f"c{i}" for i in range(n)]
    g = k.register(Guardian("guardian", GuardianConfig(restart_duration=100), ids[0], ids[0],
                            supervised=ids if flat else None))
    for cid in ids:
        k.register(ComponentHost(PassThrough(cid)))
    if not flat:
        g.form_cascade(ids)
    if crash_at is not None:
        k.inject_fault(FaultSpec(ids[-1], FaultKind.CRASH, crash_at, crash_at + 1))
    k.start()
    return k, g


def test_chain_of_one_is_direct_supervision():
    k, g = cascade_system(1, crash_at=300)
    log = k.run_until(1000)
    [v] = verdicts(log, cause="MissedPong")
    assert v.time == 320 and "reporter" not in v.payload


def test_chain_tail_crash_reported_by_predecessor():
    k, g = cascade_system(3, crash_at=300)
    log = k.run_until(1000)
    [v] = verdicts(log, cause="MissedPong")
    assert v.receiver == "c2" and v.payload["reporter"] == "c1"
    assert [r.receiver for r in log.of_kind("restart")] == ["c2"]
    assert v.time <= 300 + 100 + 20 + 2 + 1    # one extra hop per link


@pytest.mark.parametrize("n", [1, 2, 4, 7])
def test_cascade_economy(n):
    k, _ = cascade_system(n)
    chain = len(guardian_pings(k.run_until(1000)))
    k, _ = cascade_system(n, flat=True)
    flat = len(guardian_pings(k.run_until(1000)))
    assert chain == 10 and flat == 10 * n


def test_cascade_rejects_duplicates():
    k = Kernel()
    g = k.register(Guardian("guardian", GuardianConfig(), "a", "a"))
    k.register(ComponentHost(PassThrough("a")))
    with pytest.raises(DuplicateMember):
        g.form_cascade(["a", "a"])
    with pytest.raises(ValueError):
        g.form_cascade([])


def probe(pid="p", bands=None, **snap):
    row = dict(FREE, **snap)
    return TestProbe(pid, tuple(TrafficSnapshot(**row).to_values()), bands or {0: Band.admissible([1.0])})


def test_critical_situation_defers_every_probe():
    cfg = GuardianConfig(failover_target="fallback", probe_schedule=[(probe("a"), 150), (probe("b"), 420)])
    k = supervised_system(cfg, samples=10)[0]
    k.process("guardian").criticality = lambda now: True
    log = k.run_until(1000)
    assert not log.of_kind("Probe")
    deferred = log.of_kind("probe_deferred")
    assert {r.payload["probe"] for r in deferred} == {"a", "b"}
    assert all(r.payload["reason"] == "critical" for r in deferred)


def test_probe_freezes_learning_but_not_functional_learning():
    traffic = steady_traffic(20, feedback=1.0)
    cfg = GuardianConfig(failover_target="fallback", probe_schedule=[(probe(feedback=5.0), 1050)])
    k, g, _ = supervised_system(cfg, traffic=traffic)
    log = k.run_until(2000)
    [freeze] = log.of_kind("probe_freeze")
    assert freeze.payload["before"] == freeze.payload["after"]
    thresholds = [r.payload["params"]["min_time_gap"] for r in log.of_kind("decision")]
    assert thresholds[5] > thresholds[0]    # it does learn from functional inputs
    assert verdicts(log, cause="None")[0].payload["probe"] == "p"


def test_two_probes_same_tick_in_schedule_order():
    cfg = GuardianConfig(probe_schedule=[(probe("first"), 250), (probe("second"), 250)])
    k, _, _ = supervised_system(cfg, samples=5)
    log = k.run_until(500)
    assert [r.payload[0] for r in log.of_kind("Probe")] == ["first", "second"]


def _attached_guardian(probes):
    k, g, _ = supervised_system(GuardianConfig(probe_schedule=[(p, 10_000) for p in probes]), samples=1)
    for p in probes:
        g.state.outstanding_probes[p.probe_id] = 0
        g._probe_target[p.probe_id] = "decider"
    return k, g


def test_probe_response_on_band_edge_is_ok():
    p = probe("edge", {1: Band.interval(0.8, 1.2)})
    k, g = _attached_guardian([p])
    v = g.check_probe_response(Message("decider", "guardian", MessageKind.PROBE_RESPONSE, ("edge", 0.0, 1.2)), 5)
    assert v.kind is VerdictKind.OK


def test_probe_response_out_of_band_restarts():
    p = probe("wide", {0: Band.interval(0.8, 1.2)})
    k, g = _attached_guardian([p])
    v = g.check_probe_response(Message("decider", "guardian", MessageKind.PROBE_RESPONSE, ("wide", 1.5)), 5)
    assert (v.kind, v.cause) == (VerdictKind.DEFECT, Cause.PROBE_OUT_OF_BAND)
    assert g.state.restarts_used == 1


def test_probe_response_unknown_id():
    k, g = _attached_guardian([])
    with pytest.raises(UnknownProbeId):
        g.check_probe_response(Message("decider", "guardian", MessageKind.PROBE_RESPONSE, ("nope", 1.0)), 0)


def test_probe_without_answer_misses_deadline():
    hang = FaultSpec("decider", FaultKind.HANG, 240, 2000, duration=60)
    cfg = GuardianConfig(failover_target="fallback", probe_schedule=[(probe("slow"), 250)])
    k, g, _ = supervised_system(cfg, faults=[hang], samples=10)
    log = k.run_until(1000)
    [v] = [r for r in verdicts(log, cause="DeadlineMiss") if r.payload.get("probe") == "slow"]
    assert v.time == 270


def test_probe_wrong_answer_triggers_reinit():
    bad = probe("bad", {1: Band.interval(0.8, 1.6)})
    decider = OvertakeDecision("decider")
    decider.store["min_time_gap"].value = 2.5
    cfg = GuardianConfig(failover_target="fallback", probe_schedule=[(bad, 150)])
    k, g, _ = supervised_system(cfg, decider=decider, samples=10)
    log = k.run_until(1000)
    assert verdicts(log, cause="ProbeOutOfBand")
    assert log.of_kind("restart")
    assert decider.store.value("min_time_gap") == 1.5


def test_filter_examples():
    f1 = Message("x", "y", MessageKind.OUTPUT, (1,))
    f2 = Message("x", "y", MessageKind.OUTPUT, (2,))
    pr = Message("x", "y", MessageKind.PROBE_RESPONSE, ("p",))
    assert filter_outbound([f1, f2]) == [f1, f2]
    assert filter_outbound([f1, pr, f2]) == [f1, f2]
    assert filter_outbound([pr, pr]) == []


def test_probe_answers_never_reach_boundary():
    cfg = GuardianConfig(failover_target="fallback", probe_schedule=[(probe(str(t)), t) for t in range(50, 950, 90)])
    k, _, _ = supervised_system(cfg, samples=10)
    log = k.run_until(1000)
    assert len(log.of_kind("ProbeResponse")) == 10
    assert all(r.receiver == "guardian" for r in log.of_kind("ProbeResponse"))
    assert not [r for r in log if r.receiver == "boundary" and r.is_test]


def test_watchdog_examples():
    assert watchdog_check([], [1.0], lambda w, o: True).ok
    assert not watchdog_check([], [1.0], lambda w, o: False).ok
    v = watchdog_check([], [1.0], lambda w, o: bool(w))
    assert v.cause is Cause.WATCHDOG_IMPLAUSIBLE


def test_watchdog_catches_forced_pullout():
    corrupt = FaultSpec("decider", FaultKind.CORRUPT_OUTPUT, 500, 800, channel=0, value=float(Phase.PULL_OUT))
    cfg = GuardianConfig(failover_target="fallback", watchdog=no_pullout_into_occupied_lane)
    k, g, _ = supervised_system(cfg, faults=[corrupt], samples=10)
    log = k.run_until(1000)
    flagged = verdicts(log, cause="WatchdogImplausible")
    assert [r.payload["seq"] for r in flagged] == [5, 6, 7]


def test_run_monitors_clean():
    assert run_monitors(OvertakeDecision("d", case_base=CaseBase(10)), 10, 0) == []


def test_run_monitors_resets_only_violating_scalar():
    d = OvertakeDecision("d")
    d.store["min_time_gap"].value = 4.0
    d.history.append(TrafficSnapshot(**FREE))
    [v] = run_monitors(d, None, 7)
    assert (v.cause, v.at) == (Cause.PARAM_OUT_OF_RANGE, 7)
    assert d.store.value("min_time_gap") == 1.5
    assert len(d.history) == 1    # operational state untouched


def test_run_monitors_enforces_budget():
    d = OvertakeDecision("d", case_base=CaseBase(100, Forgetting.NONE))
    for i in range(30):
        d.store.case_base.add((float(i),))
    [v] = run_monitors(d, 10, 0)
    assert v.cause is Cause.BUDGET_EXCEEDED
    assert [f[0] for f, _ in d.store.case_base.cases] == [float(i) for i in range(20, 30)]


def test_config_validation():
    with pytest.raises(ValueError):
        GuardianConfig(ping_period=100, response_deadline=100)
    with pytest.raises(ValueError):
        GuardianConfig(max_restarts=-1)
    with pytest.raises(ValueError):
        GuardianConfig(probe_schedule=[(probe("x"), 0), (probe("x"), 5)])


def test_band_forms():
    assert Band.interval(0.8, 1.2).contains(0.8) and Band.interval(0.8, 1.2).contains(1.2)
    assert not Band.interval(0.8, 1.2).contains(1.2000001)
    assert Band.admissible([0, 1]).contains(1) and not Band.admissible([0, 1]).contains(0.5)
    with pytest.raises(ValueError):
        Band.admissible([])
    with pytest.raises(ValueError):
        TestProbe("p", (), {})
