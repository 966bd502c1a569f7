"""Verdicts raised by monitors, voters and the system boundary.

A *defect* is an unwanted behaviour of a subsystem that was detected and
contained internally. A *failure* is visible at the system boundary: a
functional output that is wrong or absent when it was demanded.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass


class VerdictKind(str, enum.Enum):
    OK = "Ok"
    DEFECT = "Defect"
    FAILURE = "Failure"


class Cause(str, enum.Enum):
    MISSED_PONG = "MissedPong"
    PROBE_OUT_OF_BAND = "ProbeOutOfBand"
    WATCHDOG_IMPLAUSIBLE = "WatchdogImplausible"
    PARAM_OUT_OF_RANGE = "ParamOutOfRange"
    BUDGET_EXCEEDED = "BudgetExceeded"
    DEADLINE_MISS = "DeadlineMiss"
    # redundancy arrangements
    VOTE_FAILURE = "VoteFailure"
    VOTE_DISSENT = "VoteDissent"
    BOTH_FAILED = "BothFailed"
    DIVERGENCE = "Divergence"
    RESTART_BUDGET_EXHAUSTED = "RestartBudgetExhausted"
    NONE = "None"


@dataclass(frozen=True, slots=True)
class Verdict:
    subject: str
    kind: VerdictKind
    cause: Cause
    at: int

    @property
    def ok(self) -> bool:
        return self.kind is VerdictKind.OK

    @classmethod
    def okay(cls, subject: str, at: int) -> Verdict:
        return cls(subject, VerdictKind.OK, Cause.NONE, at)

    @classmethod
    def defect(cls, subject: str, cause: Cause, at: int) -> Verdict:
        return cls(subject, VerdictKind.DEFECT, cause, at)

    @classmethod
    def failure(cls, subject: str, cause: Cause, at: int) -> Verdict:
        return cls(subject, VerdictKind.FAILURE, cause, at)

    def payload(self, **extra) -> dict:
        out = {"verdict": self.kind.value, "cause": self.cause.value}
        out.update(extra)
        return out
