"""Runtime safeguards for adaptive automotive software, in simulation."""

from .component import CaseBase, Component, Forgetting, ParameterStore, ScalarParam, StepCostModel
from .guardian import Band, Guardian, GuardianConfig, Mode, TestProbe
from .kernel import EventLog, FaultKind, FaultSpec, Kernel, Message, MessageKind
from .overtake import DecisionParams, FallbackDecision, OvertakeDecision, Phase, TrafficSnapshot
from .redundancy import RedundancyGroup, RedundancyMode, tmr_vote
from .verdicts import Cause, Verdict, VerdictKind

__version__ = "0.1.0"

__all__ = [
    "Band", "CaseBase", "Cause", "Component", "DecisionParams", "EventLog", "FallbackDecision", "FaultKind",
    "FaultSpec", "Forgetting", "Guardian", "GuardianConfig", "Kernel", "Message", "MessageKind", "Mode",
    "OvertakeDecision", "ParameterStore", "Phase", "RedundancyGroup", "RedundancyMode", "ScalarParam",
    "StepCostModel", "TestProbe", "TrafficSnapshot", "Verdict", "VerdictKind", "tmr_vote",
]
