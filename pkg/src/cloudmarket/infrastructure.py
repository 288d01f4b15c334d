"""Priced compute resources, leases, billing and core allocation.

Money is integer millicents throughout (1 US$ = 100,000 mc). A rate of
``rate_mcps`` is charged per leased unit per started second. What a "unit" is
depends on the resource kind:

* local / grid resources bill each task execution as its own lease on one
  core (usage pricing);
* cloud on-demand resources bill the whole instance from lease open to
  release, idle time included.
"""

from __future__ import annotations

import enum
import itertools
import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, NamedTuple

from .engine import HOUR, SECOND, EventKind, EventQueue, SimError, SimTime

MC_PER_DOLLAR = 100_000


class CapacityExceeded(SimError):
    pass


class AlreadyClosed(SimError):
    pass


class UnknownInstanceType(SimError, KeyError):
    pass


class ResourceKind(enum.Enum):
    LOCAL = "local"
    GRID = "grid"
    CLOUD = "cloud"


class AllocationPolicy(enum.Enum):
    SPACE_SHARED = "space_shared"
    TIME_SHARED = "time_shared"


class BillingMode(enum.Enum):
    PER_SECOND = "per_second"
    PER_HOUR = "per_hour"


class BillingStart(enum.Enum):
    REQUEST = "request"
    READY = "ready"


@dataclass(frozen=True)
class ComputeResource:
    id: str
    cores: int = 1
    speed_factor: Fraction = Fraction(1)
    rate_mcps: int = 0
    kind: ResourceKind = ResourceKind.GRID
    org: str = ""
    provisioning_delay: SimTime = 0
    allocation_policy: AllocationPolicy = AllocationPolicy.SPACE_SHARED
    billing_mode: BillingMode = BillingMode.PER_SECOND
    rate_hourly_mc: int = 0
    # what the broker is told; defaults to the true speed
    advertised_speed: Fraction | None = None
    failure_prob: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "speed_factor", Fraction(self.speed_factor))
        if self.advertised_speed is not None:
            object.__setattr__(self, "advertised_speed", Fraction(self.advertised_speed))
        if self.cores < 1:
            raise ValueError(f"{self.id}: cores must be >= 1")
        if self.speed_factor <= 0:
            raise ValueError(f"{self.id}: speed_factor must be positive")
        if self.rate_mcps < 0 or self.rate_hourly_mc < 0:
            raise ValueError(f"{self.id}: rates must be non-negative")
        if self.kind is not ResourceKind.CLOUD and self.provisioning_delay != 0:
            raise ValueError(f"{self.id}: only cloud resources have a provisioning delay")
        if self.provisioning_delay < 0:
            raise ValueError(f"{self.id}: provisioning_delay must be non-negative")
        if not 0.0 <= self.failure_prob < 1.0:
            raise ValueError(f"{self.id}: failure_prob must lie in [0, 1)")

    @property
    def is_cloud(self) -> bool:
        return self.kind is ResourceKind.CLOUD

    @property
    def nominal_speed(self) -> Fraction:
        return self.speed_factor if self.advertised_speed is None else self.advertised_speed


def run_duration(length: SimTime, speed: Fraction) -> SimTime:
    """Wall time of ``length`` reference-ms of work on one core, rounded up."""
    return math.ceil(Fraction(length) / Fraction(speed))


def tariff(resource: ComputeResource, duration: SimTime) -> int:
    """Charge in millicents for one leased unit held for ``duration`` ms."""
    if duration < 0:
        raise ValueError("negative duration")
    if resource.billing_mode is BillingMode.PER_HOUR:
        return resource.rate_hourly_mc * -(-duration // HOUR)
    return resource.rate_mcps * -(-duration // SECOND)


def format_dollars(mc: int) -> str:
    """Render millicents as dollars with three decimals (``76500`` -> ``0.765``)."""
    sign = "-" if mc < 0 else ""
    mc = abs(mc)
    # round half up to the nearest tenth of a cent
    thousandths = (mc + 50) // 100
    return f"{sign}{thousandths // 1000}.{thousandths % 1000:03d}"


@dataclass
class ResourceLease:
    lease_id: str
    resource: ComputeResource
    requested_at: SimTime
    ready_at: SimTime
    start: SimTime
    end: SimTime | None = None
    billed: int | None = None
    reason: str = "lease"

    @property
    def is_open(self) -> bool:
        return self.end is None

    def usable(self, now: SimTime) -> bool:
        return self.is_open and now >= self.ready_at


class LedgerRecord(NamedTuple):
    lease_id: str
    amount_mc: int
    reason: str


@dataclass
class CostLedger:
    records: list[LedgerRecord] = field(default_factory=list)
    total_mc: int = 0

    def add(self, lease_id: str, amount_mc: int, reason: str) -> None:
        if amount_mc < 0:
            raise ValueError("ledger amounts are non-negative")
        self.records.append(LedgerRecord(lease_id, amount_mc, reason))
        self.total_mc += amount_mc

    def __len__(self) -> int:
        return len(self.records)


def release(lease: ResourceLease, now: SimTime, ledger: CostLedger) -> int:
    """Close ``lease`` at ``now`` and book its charge on ``ledger``."""
    if not lease.is_open:
        raise AlreadyClosed(f"lease {lease.lease_id} already closed at t={lease.end}")
    lease.end = max(now, lease.start)
    lease.billed = tariff(lease.resource, lease.end - lease.start)
    ledger.add(lease.lease_id, lease.billed, lease.reason)
    return lease.billed


@dataclass(frozen=True)
class InstanceType:
    name: str
    rate_mcps: int
    cores: int = 1
    speed_factor: Fraction = Fraction(1)
    provisioning_delay: SimTime = 60 * SECOND
    cap: int | None = None
    billing_mode: BillingMode = BillingMode.PER_SECOND
    rate_hourly_mc: int = 0
    allocation_policy: AllocationPolicy = AllocationPolicy.SPACE_SHARED

    def resource(self, node_id: str) -> ComputeResource:
        return ComputeResource(
            id=node_id,
            org=self.name,
            kind=ResourceKind.CLOUD,
            cores=self.cores,
            speed_factor=self.speed_factor,
            rate_mcps=self.rate_mcps,
            provisioning_delay=self.provisioning_delay,
            allocation_policy=self.allocation_policy,
            billing_mode=self.billing_mode,
            rate_hourly_mc=self.rate_hourly_mc,
        )


class ProviderPool:
    """Hands out leases on catalog instance types and fixed resources."""

    def __init__(
        self,
        catalog: Iterable[InstanceType] = (),
        billing_start: BillingStart = BillingStart.REQUEST,
        prefix: str = "",
    ):
        self.catalog = {it.name: it for it in catalog}
        self.billing_start = billing_start
        self.prefix = prefix
        self.leases: list[ResourceLease] = []
        self._ids = itertools.count(1)
        self._nodes: dict[str, itertools.count] = {}

    def active(self, instance_type: str | None = None) -> list[ResourceLease]:
        return [
            l
            for l in self.leases
            if l.is_open and (instance_type is None or l.resource.org == instance_type)
        ]

    def lease(self, resource: ComputeResource, now: SimTime, queue: EventQueue | None = None,
              reason: str = "lease") -> ResourceLease:
        ready = now + resource.provisioning_delay
        start = now if self.billing_start is BillingStart.REQUEST else ready
        lease = ResourceLease(f"{self.prefix}L{next(self._ids):05d}", resource, now, ready, start, reason=reason)
        self.leases.append(lease)
        if queue is not None:
            queue.push(ready, EventKind.LEASE_READY, lease)
        return lease

    def provision(self, instance_type: str, count: int, now: SimTime,
                  queue: EventQueue | None = None) -> list[ResourceLease]:
        if count < 1:
            raise ValueError("count must be >= 1")
        try:
            itype = self.catalog[instance_type]
        except KeyError:
            raise UnknownInstanceType(instance_type) from None
        in_use = len(self.active(instance_type))
        if itype.cap is not None and in_use + count > itype.cap:
            raise CapacityExceeded(
                f"{instance_type}: {in_use} active + {count} requested exceeds cap {itype.cap}"
            )
        numbers = self._nodes.setdefault(instance_type, itertools.count(1))
        return [
            self.lease(itype.resource(f"{instance_type}-{next(numbers):03d}"), now, queue,
                       reason="cloud-node")
            for _ in range(count)
        ]


def provision(pool: ProviderPool, instance_type: str, count: int, now: SimTime,
              queue: EventQueue | None = None) -> list[ResourceLease]:
    return pool.provision(instance_type, count, now, queue)


class Completion(NamedTuple):
    task_id: str
    time: Fraction


class Started(NamedTuple):
    task_id: str
    time: SimTime


class Executor:
    """Runs tasks on one resource's cores.

    Work is measured in reference milliseconds (a speed-1 core clears one per
    ms). ``advance(now)`` must be called with non-decreasing ``now``; it
    returns completions with their exact (possibly fractional) finish times.
    """

    def __init__(self, resource: ComputeResource):
        self.resource = resource
        self.started: list[Started] = []

    def submit(self, task_id: str, work: SimTime, now: SimTime) -> SimTime:
        raise NotImplementedError

    def advance(self, now: SimTime) -> list[Completion]:
        raise NotImplementedError

    def next_completion(self) -> SimTime | None:
        raise NotImplementedError

    def remove(self, task_id: str, now: SimTime) -> None:
        raise NotImplementedError

    def resident(self) -> int:
        raise NotImplementedError

    def running(self) -> dict[str, SimTime]:
        """Task id -> start time for tasks currently holding a core."""
        raise NotImplementedError

    def free_cores(self) -> int:
        return max(0, self.resource.cores - self.resident())

    def take_started(self) -> list[Started]:
        out, self.started = self.started, []
        return out


class SpaceSharedExecutor(Executor):
    """One task per core until it finishes; overflow waits in FIFO order."""

    def __init__(self, resource: ComputeResource):
        super().__init__(resource)
        self._running: dict[str, tuple[SimTime, SimTime]] = {}
        self._queue: deque[tuple[str, SimTime]] = deque()
        self._done: list[Completion] = []
        self.peak = 0

    def _start(self, task_id: str, work: SimTime, now: SimTime) -> SimTime:
        end = now + run_duration(work, self.resource.speed_factor)
        self._running[task_id] = (now, end)
        self.started.append(Started(task_id, now))
        self.peak = max(self.peak, len(self._running))
        return end

    def submit(self, task_id: str, work: SimTime, now: SimTime) -> SimTime:
        self._settle(now)
        if len(self._running) < self.resource.cores:
            return self._start(task_id, work, now)
        self._queue.append((task_id, work))
        return self._projected(task_id)

    def _projected(self, task_id: str) -> SimTime:
        frees = sorted(end for _, end in self._running.values())
        for queued, work in self._queue:
            at = frees.pop(0)
            end = at + run_duration(work, self.resource.speed_factor)
            frees.append(end)
            frees.sort()
            if queued == task_id:
                return end
        raise KeyError(task_id)

    def _settle(self, now: SimTime) -> None:
        while self._running:
            task_id, (_, end) = min(self._running.items(), key=lambda kv: (kv[1][1], kv[0]))
            if end > now:
                break
            del self._running[task_id]
            self._done.append(Completion(task_id, Fraction(end)))
            if self._queue:
                nxt, work = self._queue.popleft()
                self._start(nxt, work, end)

    def advance(self, now: SimTime) -> list[Completion]:
        self._settle(now)
        out, self._done = self._done, []
        return out

    def next_completion(self) -> SimTime | None:
        times = [int(c.time) for c in self._done] + [end for _, end in self._running.values()]
        return min(times) if times else None

    def remove(self, task_id: str, now: SimTime) -> None:
        self._settle(now)
        if task_id in self._running:
            del self._running[task_id]
            if self._queue:
                nxt, work = self._queue.popleft()
                self._start(nxt, work, now)
        else:
            self._queue = deque(q for q in self._queue if q[0] != task_id)

    def resident(self) -> int:
        return len(self._running)

    def queued(self) -> int:
        return len(self._queue)

    def running(self) -> dict[str, SimTime]:
        return {tid: start for tid, (start, _) in self._running.items()}


class TimeSharedExecutor(Executor):
    """Fluid processor sharing across cores.

    With ``n`` resident tasks on ``c`` cores each task progresses at
    ``speed * min(1, c / n)``; a task never uses more than one core.
    Internal time is an exact ``Fraction`` so completion instants are exact.
    """

    def __init__(self, resource: ComputeResource):
        super().__init__(resource)
        self._remaining: dict[str, Fraction] = {}
        self._start_at: dict[str, SimTime] = {}
        self._t = Fraction(0)
        self._done: list[Completion] = []

    def _rate(self) -> Fraction:
        n = len(self._remaining)
        return self.resource.speed_factor * min(Fraction(1), Fraction(self.resource.cores, n))

    def _progress(self, until: Fraction) -> None:
        while self._remaining and self._t < until:
            rate = self._rate()
            shortest = min(self._remaining.values())
            finish = self._t + shortest / rate
            step_to = min(finish, until)
            worked = (step_to - self._t) * rate
            for tid in self._remaining:
                self._remaining[tid] -= worked
            self._t = step_to
            for tid in sorted(t for t, r in self._remaining.items() if r <= 0):
                del self._remaining[tid]
                del self._start_at[tid]
                self._done.append(Completion(tid, self._t))
        self._t = max(self._t, until)

    def submit(self, task_id: str, work: SimTime, now: SimTime) -> SimTime:
        self._progress(Fraction(now))
        self._remaining[task_id] = Fraction(work)
        self._start_at[task_id] = now
        self.started.append(Started(task_id, now))
        return self.projected_completion(task_id)

    def projected_completion(self, task_id: str) -> SimTime:
        """Finish time of ``task_id`` if no other task arrives (ceil to ms)."""
        remaining = dict(self._remaining)
        t = self._t
        while task_id in remaining:
            n = len(remaining)
            rate = self.resource.speed_factor * min(Fraction(1), Fraction(self.resource.cores, n))
            shortest = min(remaining.values())
            t += shortest / rate
            remaining = {k: v - shortest for k, v in remaining.items() if v > shortest}
        return math.ceil(t)

    def advance(self, now: SimTime) -> list[Completion]:
        self._progress(Fraction(now))
        out, self._done = self._done, []
        return out

    def next_completion(self) -> SimTime | None:
        if self._done:
            return math.ceil(min(c.time for c in self._done))
        if not self._remaining:
            return None
        return math.ceil(self._t + min(self._remaining.values()) / self._rate())

    def remove(self, task_id: str, now: SimTime) -> None:
        self._progress(Fraction(now))
        self._remaining.pop(task_id, None)
        self._start_at.pop(task_id, None)

    def resident(self) -> int:
        return len(self._remaining)

    def progress_rates(self) -> dict[str, Fraction]:
        if not self._remaining:
            return {}
        rate = self._rate()
        return {tid: rate for tid in self._remaining}

    def running(self) -> dict[str, SimTime]:
        return dict(self._start_at)


def make_executor(resource: ComputeResource) -> Executor:
    if resource.allocation_policy is AllocationPolicy.TIME_SHARED:
        return TimeSharedExecutor(resource)
    return SpaceSharedExecutor(resource)


def allocate_task(executor: Executor, task_id: str, work: SimTime, now: SimTime) -> SimTime:
    """Place a task on a resource and return its projected completion time."""
    return executor.submit(task_id, work, now)


class CompletionWindow:
    """Recent completions on one resource, for adaptive throughput estimates."""

    def __init__(self, window_ms: SimTime, origin: SimTime | None = None):
        if window_ms <= 0:
            raise ValueError("window must be positive")
        self.window_ms = window_ms
        self.origin = origin
        self.entries: deque[tuple[SimTime, SimTime]] = deque()
        self.total = 0

    def observe_from(self, now: SimTime) -> None:
        if self.origin is None:
            self.origin = now

    def record(self, at: SimTime, runtime: SimTime) -> None:
        self.observe_from(at - runtime)
        self.entries.append((at, runtime))
        self.total += 1

    def reset(self, now: SimTime) -> None:
        self.entries.clear()
        self.total = 0
        self.origin = now

    def _recent(self, now: SimTime) -> list[tuple[SimTime, SimTime]]:
        return [(t, r) for t, r in self.entries if now - self.window_ms < t <= now]

    def count(self, now: SimTime) -> int:
        return len(self._recent(now))

    def mean_runtime(self, now: SimTime) -> Fraction | None:
        recent = self._recent(now)
        if not recent:
            return None
        return Fraction(sum(r for _, r in recent), len(recent))


def completion_rate(
    resource: ComputeResource,
    window: CompletionWindow,
    now: SimTime,
    reference_length: SimTime,
) -> float:
    """Tasks per second completed on ``resource`` over the recent window.

    Before the first completion the static estimate
    ``cores * speed / reference_length`` is returned instead.
    """
    if window.total == 0 or window.origin is None:
        return float(resource.cores * resource.nominal_speed * SECOND / reference_length)
    span = min(window.window_ms, now - window.origin)
    if span <= 0:
        return float(resource.cores * resource.nominal_speed * SECOND / reference_length)
    return window.count(now) * SECOND / span
