"""Bag-of-tasks applications and timed request streams."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .engine import SeededRng, SimError, SimTime, sample_task_length


class IncompleteLog(SimError):
    pass


class IllegalTransition(SimError):
    pass


class TaskState(enum.Enum):
    PENDING = "Pending"
    DISPATCHED = "Dispatched"
    RUNNING = "Running"
    DONE = "Done"
    FAILED = "Failed"


_ALLOWED = {
    TaskState.PENDING: {TaskState.DISPATCHED},
    TaskState.DISPATCHED: {TaskState.RUNNING},
    TaskState.RUNNING: {TaskState.DONE, TaskState.FAILED},
    TaskState.FAILED: {TaskState.PENDING},
    TaskState.DONE: set(),
}


class Strategy(enum.Enum):
    TIME_OPT = "time-opt"
    COST_OPT = "cost-opt"
    DEADLINE_PROVISIONING = "provision"


@dataclass
class TaskSpec:
    task_id: str
    length: SimTime
    arrival: SimTime = 0
    state: TaskState = TaskState.PENDING
    attempts: int = 0
    history: list[TaskState] = field(default_factory=list)

    def __post_init__(self):
        if self.length <= 0:
            raise ValueError(f"task {self.task_id}: length must be positive")
        if not self.history:
            self.history.append(self.state)

    def move(self, new: TaskState) -> None:
        if new not in _ALLOWED[self.state]:
            raise IllegalTransition(f"{self.task_id}: {self.state.value} -> {new.value}")
        self.state = new
        self.history.append(new)


@dataclass
class Application:
    app_id: str
    tasks: list[TaskSpec]
    deadline: SimTime
    budget_mc: int
    strategy: Strategy
    # broker's per-task length estimate and the walltime bound used for budget commitments
    ref_length: SimTime = 0
    max_length: SimTime = 0

    def __post_init__(self):
        if self.budget_mc < 0:
            raise ValueError("budget must be non-negative")
        if self.tasks and self.deadline <= min(t.arrival for t in self.tasks):
            raise ValueError("deadline must fall after the earliest arrival")
        if not self.ref_length and self.tasks:
            self.ref_length = round(sum(t.length for t in self.tasks) / len(self.tasks))
        if not self.max_length:
            self.max_length = max([t.length for t in self.tasks] + [self.ref_length])


def make_bag(
    n: int,
    mean: SimTime,
    jitter: SimTime,
    deadline: SimTime,
    budget_mc: int,
    strategy: Strategy,
    rng: SeededRng,
    app_id: str = "app",
) -> Application:
    """A parameter sweep of ``n`` independent tasks submitted together at t=0."""
    if n < 1:
        raise ValueError("a bag needs at least one task")
    width = len(str(n - 1))
    tasks = [
        TaskSpec(f"t{i:0{width}d}", sample_task_length(rng, mean, jitter)) for i in range(n)
    ]
    return Application(app_id, tasks, deadline, budget_mc, strategy,
                       ref_length=mean, max_length=mean + jitter)


@dataclass(frozen=True)
class RequestStream:
    stream_id: str
    arrivals: tuple[SimTime, ...]
    service_length: SimTime
    resource_cap: int

    def __post_init__(self):
        if any(b < a for a, b in zip(self.arrivals, self.arrivals[1:])):
            raise ValueError("arrivals must be non-decreasing")
        if self.resource_cap < 1:
            raise ValueError("resource cap must be positive")
        if self.service_length <= 0:
            raise ValueError("service length must be positive")


def uniform_arrivals(count: int, horizon: SimTime) -> tuple[SimTime, ...]:
    """``count`` arrivals evenly spaced over ``horizon``, the first at one spacing."""
    return tuple((i + 1) * horizon // count for i in range(count))


def make_stream(
    request_counts: Sequence[int],
    service_length: SimTime,
    cap: int,
    horizon: SimTime,
) -> list[RequestStream]:
    if any(c <= 0 for c in request_counts):
        raise ValueError("request counts must be positive")
    return [
        RequestStream(f"load{count}-cap{cap}", uniform_arrivals(count, horizon), service_length, cap)
        for count in request_counts
    ]


@dataclass(frozen=True)
class ResponseSummary:
    mean: float
    max: SimTime
    count: int


def response_time(
    arrivals: Iterable[tuple[str, SimTime]] | RequestStream,
    completions: Mapping[str, SimTime],
) -> ResponseSummary:
    """Mean and max of completion minus arrival over every request.

    ``arrivals`` is either a stream (request ids are ``r0``, ``r1``, ...) or
    explicit ``(request_id, arrival)`` pairs.
    """
    if isinstance(arrivals, RequestStream):
        arrivals = [(f"r{i}", t) for i, t in enumerate(arrivals.arrivals)]
    responses = []
    for rid, at in arrivals:
        if rid not in completions:
            raise IncompleteLog(f"request {rid} has no completion record")
        responses.append(completions[rid] - at)
    if not responses:
        return ResponseSummary(0.0, 0, 0)
    return ResponseSummary(sum(responses) / len(responses), max(responses), len(responses))
