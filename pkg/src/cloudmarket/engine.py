"""Virtual-time event loop and seeded randomness.

Time is an integer count of milliseconds since the start of a run. Events
are ordered by ``(fire_at, seq)`` where ``seq`` is the insertion counter, so
simultaneous events pop in the order they were pushed.

Randomness comes from numpy's PCG64 bit generator. Child streams are derived
with ``SeedSequence`` spawn keys, which keeps every subsystem's draws
independent of how many draws another subsystem made.
"""

from __future__ import annotations

import enum
import heapq
from dataclasses import dataclass, field
from typing import Any

import numpy as np

SimTime = int

MS = 1
SECOND = 1000
MINUTE = 60 * SECOND
HOUR = 60 * MINUTE
DAY = 24 * HOUR


class SimError(Exception):
    """Base class for simulation errors."""


class PastEvent(SimError):
    pass


class EmptyQueue(SimError):
    pass


class InvalidJitter(SimError, ValueError):
    pass


class EventKind(enum.Enum):
    TASK_ARRIVAL = "TaskArrival"
    TASK_COMPLETION = "TaskCompletion"
    TASK_FAILURE = "TaskFailure"
    LEASE_READY = "LeaseReady"
    LEASE_EXPIRED = "LeaseExpired"
    DISPATCH_TICK = "DispatchTick"
    REQUEST_ARRIVAL = "RequestArrival"
    RESERVATION_START = "ReservationStart"
    OUTAGE_CHANGE = "OutageChange"


@dataclass(order=True, frozen=True)
class Event:
    fire_at: SimTime
    seq: int
    kind: EventKind = field(compare=False)
    payload: Any = field(default=None, compare=False)


class EventQueue:
    """Binary-heap event list with a monotone clock.

    ``push`` refuses events in the past; ``advance`` pops the minimal event and
    moves the clock to its timestamp.
    """

    def __init__(self, start: SimTime = 0):
        self._heap: list[Event] = []
        self._seq = 0
        self.clock: SimTime = start

    def __len__(self) -> int:
        return len(self._heap)

    def __bool__(self) -> bool:
        return bool(self._heap)

    def push(self, fire_at: SimTime, kind: EventKind, payload: Any = None) -> Event:
        if fire_at < self.clock:
            raise PastEvent(f"event {kind.value} at t={fire_at} is before clock t={self.clock}")
        event = Event(int(fire_at), self._seq, kind, payload)
        self._seq += 1
        heapq.heappush(self._heap, event)
        return event

    def peek(self) -> Event:
        if not self._heap:
            raise EmptyQueue("no pending events")
        return self._heap[0]

    def advance(self) -> Event:
        if not self._heap:
            raise EmptyQueue("no pending events")
        event = heapq.heappop(self._heap)
        self.clock = event.fire_at
        return event


def push_event(queue: EventQueue, event: Event) -> None:
    """Insert an already-built event, keeping its sequence number."""
    if event.fire_at < queue.clock:
        raise PastEvent(f"event at t={event.fire_at} is before clock t={queue.clock}")
    heapq.heappush(queue._heap, event)
    queue._seq = max(queue._seq, event.seq + 1)


def advance(queue: EventQueue) -> Event:
    return queue.advance()


class SeededRng:
    """Deterministic PCG64 generator with named child streams."""

    def __init__(self, seed: int, spawn_key: tuple[int, ...] = ()):
        if not 0 <= seed < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self.spawn_key = tuple(spawn_key)
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=self.spawn_key))
        )

    def child(self, index: int) -> SeededRng:
        return SeededRng(self.seed, self.spawn_key + (index,))

    def integers(self, low: int, high: int) -> int:
        """Uniform integer on the closed interval ``[low, high]``."""
        return int(self._gen.integers(low, high, endpoint=True))

    def random(self) -> float:
        return float(self._gen.random())


def sample_task_length(rng: SeededRng, mean: SimTime, jitter: SimTime) -> SimTime:
    """Draw a task length uniformly from ``[mean - jitter, mean + jitter]``."""
    if jitter < 0 or jitter > mean:
        raise InvalidJitter(f"jitter {jitter} must lie in [0, mean={mean}]")
    if jitter == 0:
        return mean
    return rng.integers(mean - jitter, mean + jitter)
