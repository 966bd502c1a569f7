"""The supervised component contract.

An adaptive component is parameterised software whose parameters change at
run time. Its adaptive state lives in a :class:`ParameterStore`: bounded
scalar parameters with declared initial values, plus an optional capped case
base. Everything else a component remembers (input windows, maneuver phase)
is operational state and is not subject to learning.
"""

from __future__ import annotations

import copy
import enum
import hashlib
import json
from collections import deque
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, NamedTuple, Sequence


class ComponentError(Exception):
    pass


class NotRunning(ComponentError):
    pass


class TypeMismatch(ComponentError):
    pass


@dataclass(slots=True)
class ScalarParam:
    name: str
    value: float
    lo: float
    hi: float
    init: float

    def __post_init__(self):
        if not self.lo <= self.init <= self.hi:
            raise ValueError(f"{self.name}: init {self.init} outside [{self.lo}, {self.hi}]")

    @classmethod
    def fresh(cls, name: str, init: float, lo: float, hi: float) -> ScalarParam:
        return cls(name, init, lo, hi, init)

    def in_range(self) -> bool:
        return self.lo <= self.value <= self.hi


class Forgetting(str, enum.Enum):
    NONE = "none"
    EVICT_OLDEST = "evict_oldest"


@dataclass
class CaseBase:
    max_size: int
    forgetting: Forgetting = Forgetting.EVICT_OLDEST
    cases: deque = field(default_factory=deque)

    def __post_init__(self):
        if self.max_size <= 0:
            raise ValueError("max_size must be positive")
        self.forgetting = Forgetting(self.forgetting)

    def __len__(self) -> int:
        return len(self.cases)

    def add(self, features: Sequence[float], outcome: Any = None) -> None:
        self.cases.append((tuple(features), outcome))
        if self.forgetting is Forgetting.EVICT_OLDEST:
            while len(self.cases) > self.max_size:
                self.cases.popleft()

    def evict_to(self, size: int) -> int:
        evicted = 0
        while len(self.cases) > size:
            self.cases.popleft()
            evicted += 1
        return evicted

    def clear(self) -> None:
        self.cases.clear()


class Violation(NamedTuple):
    name: str
    value: float
    bound: float


@dataclass
class ParameterStore:
    scalars: dict[str, ScalarParam] = field(default_factory=dict)
    case_base: CaseBase | None = None
    learning_enabled: bool = True

    @classmethod
    def of(cls, *scalars: ScalarParam, case_base: CaseBase | None = None,
           learning_enabled: bool = True) -> ParameterStore:
        return cls({s.name: s for s in scalars}, case_base, learning_enabled)

    def __getitem__(self, name: str) -> ScalarParam:
        return self.scalars[name]

    def value(self, name: str) -> float:
        return self.scalars[name].value

    @property
    def adaptive(self) -> bool:
        return self.learning_enabled or self.case_base is not None

    def reinitialize(self) -> None:
        for s in self.scalars.values():
            s.value = s.init
        if self.case_base is not None:
            self.case_base.clear()

    @contextmanager
    def frozen(self):
        """Disable learning for the duration of the block."""
        previous = self.learning_enabled
        self.learning_enabled = False
        try:
            yield self
        finally:
            self.learning_enabled = previous

    def check(self) -> list[Violation]:
        out = []
        for s in self.scalars.values():
            if s.value < s.lo:
                out.append(Violation(s.name, s.value, s.lo))
            elif s.value > s.hi:
                out.append(Violation(s.name, s.value, s.hi))
        return out

    def state(self) -> dict:
        return {
            "scalars": {n: [s.value, s.lo, s.hi, s.init] for n, s in self.scalars.items()},
            "cases": None if self.case_base is None else [[list(f), o] for f, o in self.case_base.cases],
            "learning_enabled": self.learning_enabled,
        }

    def digest(self) -> str:
        blob = json.dumps(self.state(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True, slots=True)
class StepCostModel:
    base_latency: int = 1
    per_case_latency: int = 0

    def latency(self, n_cases: int) -> int:
        return self.base_latency + self.per_case_latency * n_cases


@dataclass(frozen=True)
class StateImage:
    component_type: str
    data: Any


class Component:
    """Base class for everything a host process can run.

    Subclasses implement :meth:`_compute`, and usually :meth:`_learn` and the
    operational-state hooks. ``commit=False`` evaluates a step without
    advancing operational state, which is how test probes are answered.
    """

    type_name = "component"

    def __init__(self, cid: str, store: ParameterStore | None = None,
                 cost: StepCostModel | None = None):
        self.id = cid
        self.store = store if store is not None else ParameterStore(learning_enabled=False)
        self.cost = cost if cost is not None else StepCostModel()
        self.running = True

    @property
    def n_cases(self) -> int:
        cb = self.store.case_base
        return 0 if cb is None else len(cb)

    def step(self, inputs: Sequence[float], now: int, commit: bool = True) -> tuple[list, int]:
        if not self.running:
            raise NotRunning(self.id)
        latency = self.cost.latency(self.n_cases)
        outputs = self._compute(list(inputs), now, commit)
        return outputs, latency

    def learn(self, observation: Sequence[float]) -> None:
        if not self.store.learning_enabled:
            return
        self._learn(list(observation))

    def reinitialize(self) -> None:
        self.store.reinitialize()
        self._reset_operational()
        self.running = True

    def reset_learning(self) -> None:
        """Reinitialize the adaptive state only."""
        self.store.reinitialize()

    def snapshot(self) -> StateImage:
        return StateImage(self.type_name, copy.deepcopy((self.store, self._operational_state())))

    def restore(self, img: StateImage) -> None:
        if img.component_type != self.type_name:
            raise TypeMismatch(f"cannot restore {img.component_type} image into {self.type_name}")
        store, op = copy.deepcopy(img.data)
        self.store = store
        self._load_operational_state(op)
        self.running = True

    def param_check(self) -> list[Violation]:
        return self.store.check()

    def observable_state(self) -> tuple:
        return (self.store.state(), self._operational_state())

    # -- subclass hooks ---------------------------------------------------

    def _compute(self, inputs: list, now: int, commit: bool) -> list:
        raise NotImplementedError

    def _learn(self, observation: list) -> None:
        if self.store.case_base is not None:
            self.store.case_base.add(observation, None)

    def _operational_state(self) -> Any:
        return None

    def _load_operational_state(self, state: Any) -> None:
        pass

    def _reset_operational(self) -> None:
        pass


class PassThrough(Component):
    """Non-adaptive pipeline stage; forwards its inputs unchanged."""

    type_name = "passthrough"

    def _compute(self, inputs, now, commit):
        return inputs

