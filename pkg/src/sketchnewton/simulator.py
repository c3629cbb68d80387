"""Deterministic virtual-clock model of a serverless worker pool.

Every submitted task gets a duration when it is submitted; nothing runs on a real
clock. A batch of tasks starts at the executor's current virtual time and the
master then waits for "enough" of them (the first ``k``, or until a predicate over
the completion log holds). Task bodies are pure and evaluated lazily, only when a
result is actually collected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from scipy.special import ndtri

__all__ = [
    "CloudStore",
    "ExecutorExhausted",
    "SimExecutor",
    "StragglerModel",
    "Task",
    "TaskHandle",
    "TaskOutcome",
]

# A b x b block product at b = 64 costs one virtual second.
FLOPS_PER_SECOND = 2.0 * 64**3
MIN_DURATION = 1e-9


class ExecutorExhausted(RuntimeError):
    """Every task in the batch finished and the wait condition still failed."""


@dataclass(frozen=True)
class StragglerModel:
    """Task duration model: constant base time with a Bernoulli slowdown.

    Defaults reproduce a 2% straggler rate at 180/135 of the median job time.
    """

    straggler_prob: float = 0.02
    slowdown: float = 180.0 / 135.0
    invoke_overhead: float = 0.0
    base_time: float = 1.0
    flops_per_second: float = FLOPS_PER_SECOND
    jitter: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.straggler_prob <= 1.0:
            raise ValueError(f"straggler_prob must lie in [0, 1], got {self.straggler_prob}")
        if self.slowdown < 1.0:
            raise ValueError(f"slowdown must be >= 1, got {self.slowdown}")
        if self.invoke_overhead < 0.0 or self.base_time <= 0.0 or self.flops_per_second <= 0.0:
            raise ValueError("invoke_overhead must be >= 0; base_time and flops_per_second > 0")
        if self.jitter < 0.0:
            raise ValueError(f"jitter must be >= 0, got {self.jitter}")

    def nominal(self, flops: float | None) -> float:
        if flops is None:
            return self.base_time
        return flops / self.flops_per_second


@dataclass(frozen=True)
class Task:
    fn: Callable[..., Any]
    args: tuple = ()
    flops: float | None = None
    reads: tuple[str, ...] = ()
    name: str = ""


@dataclass(frozen=True)
class TaskOutcome:
    task_id: int
    batch: int
    start_time: float
    duration: float
    finish_time: float
    was_straggler: bool


class CloudStore:
    """Key/payload store standing in for the shared object store.

    Payloads are kept as read-only arrays (or any immutable object). Reads and writes
    cost ``get_latency`` / ``put_latency`` virtual seconds, charged to the task that
    performs them.
    """

    def __init__(self, get_latency: float = 0.0, put_latency: float = 0.0):
        self.get_latency = float(get_latency)
        self.put_latency = float(put_latency)
        self._data: dict[str, Any] = {}

    def put(self, key: str, payload: Any) -> str:
        if isinstance(payload, np.ndarray):
            payload = payload.view()
            payload.setflags(write=False)
        self._data[key] = payload
        return key

    def get(self, key: str) -> Any:
        try:
            return self._data[key]
        except KeyError:
            raise KeyError(f"no payload stored under {key!r}") from None

    def delete(self, *keys: str) -> None:
        for key in keys:
            self._data.pop(key, None)

    def __contains__(self, key: str) -> bool:
        return key in self._data

    def __len__(self) -> int:
        return len(self._data)


class TaskHandle:
    __slots__ = ("outcome", "_task", "_store", "_done", "_value")

    def __init__(self, outcome: TaskOutcome, task: Task, store: CloudStore):
        self.outcome = outcome
        self._task = task
        self._store = store
        self._done = False
        self._value = None

    @property
    def task_id(self) -> int:
        return self.outcome.task_id

    @property
    def finish_time(self) -> float:
        return self.outcome.finish_time

    def result(self) -> Any:
        if not self._done:
            inputs = tuple(self._store.get(k) for k in self._task.reads)
            self._value = self._task.fn(*inputs, *self._task.args)
            self._done = True
        return self._value

    def __repr__(self) -> str:
        return f"TaskHandle({self.outcome!r})"


@dataclass
class SimExecutor:
    model: StragglerModel = field(default_factory=StragglerModel)
    store: CloudStore = field(default_factory=CloudStore)
    now: float = 0.0
    batches: int = 0
    tasks_submitted: int = 0

    def submit(self, tasks: Sequence[Task]) -> list[TaskHandle]:
        """Launch a batch at the current virtual time.

        Per-task random draws come from a stream keyed by ``(seed, batch index)``
        and are consumed in task-index order, so task ``i`` sees the same draws no
        matter how many tasks follow it in the batch.
        """
        model = self.model
        batch = self.batches
        self.batches += 1
        self.tasks_submitted += len(tasks)
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([model.seed, batch])))
        draws = rng.random((len(tasks), 2))
        handles = []
        for i, task in enumerate(tasks):
            base = model.nominal(task.flops)
            if model.jitter > 0.0:
                u = min(max(draws[i, 1], 1e-12), 1 - 1e-12)
                base *= math.exp(model.jitter * float(ndtri(u)))
            straggler = bool(draws[i, 0] < model.straggler_prob)
            work = base * (model.slowdown if straggler else 1.0)
            io = len(task.reads) * self.store.get_latency + self.store.put_latency
            duration = max(model.invoke_overhead + io + work, MIN_DURATION)
            outcome = TaskOutcome(i, batch, self.now, duration, self.now + duration, straggler)
            handles.append(TaskHandle(outcome, task, self.store))
        return handles

    @staticmethod
    def completion_order(handles: Sequence[TaskHandle]) -> list[TaskHandle]:
        return sorted(handles, key=lambda h: (h.outcome.finish_time, h.outcome.task_id))

    def await_first_k(self, handles: Sequence[TaskHandle], k: int) -> tuple[list[TaskHandle], float]:
        """The ``k`` earliest finishers (ties by task index) and the time the k-th lands."""
        if not 0 < k <= len(handles):
            raise ValueError(f"cannot wait for {k} of {len(handles)} tasks")
        first = self.completion_order(handles)[:k]
        clock = first[-1].outcome.finish_time
        self.now = max(self.now, clock)
        return first, clock

    def await_predicate(
        self, handles: Sequence[TaskHandle], pred: Callable[[list[TaskHandle]], bool]
    ) -> tuple[list[TaskHandle], float]:
        """Collect completions in finish order until ``pred(log)`` first holds."""
        log: list[TaskHandle] = []
        for h in self.completion_order(handles):
            log.append(h)
            if pred(log):
                clock = h.outcome.finish_time
                self.now = max(self.now, clock)
                return log, clock
        raise ExecutorExhausted(f"condition never satisfied after all {len(handles)} tasks completed")

    def await_all(self, handles: Sequence[TaskHandle]) -> tuple[list[TaskHandle], float]:
        return self.await_first_k(handles, len(handles))

    def advance(self, seconds: float) -> None:
        self.now += seconds

