"""Shared builders for tests: small systems assembled in code."""

from __future__ import annotations

from pathlib import Path

from safeguard.guardian import Guardian, GuardianConfig
from safeguard.kernel import FaultSpec, Kernel
from safeguard.overtake import FallbackDecision, OvertakeDecision, TrafficSnapshot
from safeguard.runtime import Boundary, ComponentHost, TrafficSource
from safeguard.scenario import build, load_scenario, parse_scenario

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def steady_traffic(n: int, period: int = 100, **overrides) -> list[TrafficSnapshot]:
    row = dict(ego_speed=30.0, lead_gap=40.0, lead_speed=24.0, adjacent_occupied=True,
               rear_gap=120.0, rear_closing_speed=3.0)
    row.update(overrides)
    return [TrafficSnapshot(t=i * period, **row) for i in range(n)]


def supervised_system(config: GuardianConfig | None = None, faults=(), samples: int = 50, seed: int = 0,
                      guardian: bool = True, decider: OvertakeDecision | None = None, traffic=None,
                      demand_deadline: int = 150):
    """traffic -> guardian -> decider (fallback on standby) -> guardian -> boundary."""
    k = Kernel(seed)
    config = config or GuardianConfig(failover_target="fallback")
    traffic = traffic or steady_traffic(samples)
    decider = decider or OvertakeDecision("decider")
    boundary = Boundary("boundary", [(i, s.t) for i, s in enumerate(traffic)], demand_deadline, "decider")
    g = None
    if guardian:
        k.register(TrafficSource("traffic", traffic, "guardian"))
        g = k.register(Guardian("guardian", config, "decider", "boundary"))
        k.register(ComponentHost(decider))
    else:
        k.register(TrafficSource("traffic", traffic, "decider"))
        k.register(ComponentHost(decider, output_to="boundary"))
    k.register(ComponentHost(FallbackDecision("fallback")))
    k.register(boundary)
    for f in faults:
        k.inject_fault(f if isinstance(f, FaultSpec) else FaultSpec(**f))
    k.start()
    return k, g, boundary


def run_scenario(name: str, seed: int | None = None, guardian: bool | None = None, **patch):
    scn = load_scenario(SCENARIOS / name)
    if patch:
        scn = scn.model_copy(update=patch)
    return build(scn, seed=seed, guardian=guardian).run()


def run_text(text: str, seed: int | None = None, guardian: bool | None = None):
    return build(parse_scenario(text), seed=seed, guardian=guardian).run()


def functional_outputs(log, boundary: str = "boundary") -> list[tuple[int, tuple]]:
    return [(r.time, tuple(r.payload)) for r in log.of_kind("Output") if r.receiver == boundary]
