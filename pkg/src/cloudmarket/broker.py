"""Deadline-and-budget-constrained (DBC) broker and deadline-driven provisioner.

Each dispatch round the broker builds a whole-application plan for the tasks
still pending, then fills the slots that are free right now according to
that plan. Re-planning every round is what makes the broker adaptive: task
duration estimates come from observed runtimes on each resource and fall
back to ``ref_length / speed`` until the first completion.

Time optimisation picks the smallest projected makespan whose cheapest
realisation fits the remaining budget. Cost optimisation fills resources in
ascending per-task cost up to what each can finish by the deadline, so the
dearer resources are used only when the cheap set would miss it.
"""

from __future__ import annotations

import bisect
import heapq
import math
from collections import Counter, deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

from .engine import EventKind, EventQueue, SimError, SimTime
from .infrastructure import (
    ComputeResource,
    CompletionWindow,
    CostLedger,
    completion_rate,
    run_duration,
    tariff,
)
from .workload import Application, Strategy, TaskSpec, TaskState


class BudgetExhausted(SimError):
    pass


class DeadlineInfeasible(SimError):
    pass


class UnknownTask(SimError, KeyError):
    pass


@dataclass(frozen=True)
class Assignment:
    task_id: str
    resource_id: str
    dispatched_at: SimTime
    projected_completion: SimTime
    projected_cost_mc: int

    def __post_init__(self):
        if self.projected_cost_mc < 0:
            raise ValueError("projected cost must be non-negative")


@dataclass(frozen=True)
class Slot:
    free_at: SimTime
    upper_free_at: SimTime
    busy: bool


@dataclass
class ResourceView:
    """The broker's snapshot of one resource during a dispatch round.

    ``slots`` has one entry per core. For a cloud resource with no lease yet,
    every slot frees at the prospective ready time and ``lease_start`` is the
    prospective billing start.
    """

    resource: ComputeResource
    duration: SimTime
    upper_duration: SimTime
    slots: list[Slot]
    free_now: int
    rate: float = 0.0
    leased: bool = False
    lease_start: SimTime | None = None

    @property
    def id(self) -> str:
        return self.resource.id

    @property
    def per_lease(self) -> bool:
        return self.resource.is_cloud

    def unit_cost(self) -> Fraction:
        """Per-task price used to rank resources."""
        if self.per_lease:
            return Fraction(tariff(self.resource, self.upper_duration), self.resource.cores)
        return Fraction(tariff(self.resource, self.upper_duration))

    def finish_times(self, n: int) -> list[SimTime]:
        """Projected finish of the k-th extra task, k = 1..n (non-decreasing)."""
        heap = [s.free_at for s in self.slots]
        heapq.heapify(heap)
        out = []
        for _ in range(n):
            end = heapq.heappop(heap) + self.duration
            out.append(end)
            heapq.heappush(heap, end)
        return out

    def lease_cost(self, n: int, now: SimTime) -> int:
        """Total bill of this instance's lease if it takes ``n`` more tasks and is then released."""
        if not self.leased and n == 0:
            return 0
        busy_ends = [s.upper_free_at for s in self.slots if s.busy]
        heap = [s.upper_free_at for s in self.slots]
        heapq.heapify(heap)
        for _ in range(n):
            end = heapq.heappop(heap) + self.upper_duration
            busy_ends.append(end)
            heapq.heappush(heap, end)
        release_at = max([now] + busy_ends)
        start = self.lease_start if self.lease_start is not None else now
        return tariff(self.resource, max(0, release_at - start))

    def plan_cost(self, n: int, now: SimTime) -> int:
        if self.per_lease:
            return self.lease_cost(n, now)
        return n * tariff(self.resource, self.upper_duration)


@dataclass
class Plan:
    counts: dict[str, int]
    makespan: SimTime
    cost_mc: int
    complete: bool = True


@dataclass
class DispatchRound:
    at: SimTime
    assignments: list[Assignment] = field(default_factory=list)
    plan: Plan | None = None
    open_leases: list[str] = field(default_factory=list)
    release_leases: list[str] = field(default_factory=list)
    deadline_infeasible: bool = False

    def __iter__(self):
        return iter(self.assignments)

    def __len__(self):
        return len(self.assignments)


@dataclass
class BrokerState:
    app: Application
    ledger: CostLedger = field(default_factory=CostLedger)
    retry_cap: int = 3
    window_ms: SimTime = 0
    deadline_margin: SimTime = 0
    pending: deque[str] = field(default_factory=deque)
    tasks: dict[str, TaskSpec] = field(default_factory=dict)
    windows: dict[str, CompletionWindow] = field(default_factory=dict)
    running: dict[str, str] = field(default_factory=dict)
    commitments: dict[str, int] = field(default_factory=dict)
    jobs: Counter = field(default_factory=Counter)
    rounds: int = 0
    done: int = 0
    failed: list[str] = field(default_factory=list)
    degraded: bool = False
    deadline_infeasible: bool = False
    budget_exhausted: bool = False
    makespan: SimTime | None = None
    history: list[DispatchRound] = field(default_factory=list)

    def __post_init__(self):
        if not self.tasks:
            self.tasks = {t.task_id: t for t in self.app.tasks}
            self.pending = deque(t.task_id for t in self.app.tasks if t.state is TaskState.PENDING)
        if not self.window_ms:
            self.window_ms = 2 * max(self.app.ref_length, 1)

    @property
    def budget_mc(self) -> int:
        return self.app.budget_mc

    @property
    def spent_mc(self) -> int:
        return self.ledger.total_mc

    @property
    def remaining_mc(self) -> int:
        return self.budget_mc - self.spent_mc

    @property
    def deadline(self) -> SimTime:
        return self.app.deadline

    @property
    def finished(self) -> bool:
        return not self.pending and not self.running

    def window(self, resource_id: str) -> CompletionWindow:
        if resource_id not in self.windows:
            self.windows[resource_id] = CompletionWindow(self.window_ms)
        return self.windows[resource_id]

    def available_mc(self) -> int:
        """Budget not yet spent nor committed to running per-task executions."""
        return self.remaining_mc - sum(self.commitments.values())

    def estimate_duration(self, resource: ComputeResource, now: SimTime) -> SimTime:
        observed = self.window(resource.id).mean_runtime(now)
        if observed is not None:
            return math.ceil(observed)
        return run_duration(self.app.ref_length, resource.nominal_speed)

    def rate(self, resource: ComputeResource, now: SimTime) -> float:
        return completion_rate(resource, self.window(resource.id), now, self.app.ref_length)


def build_view(
    state: BrokerState,
    resource: ComputeResource,
    now: SimTime,
    running_starts: Sequence[SimTime] = (),
    *,
    leased: bool = True,
    ready_at: SimTime | None = None,
    lease_start: SimTime | None = None,
) -> ResourceView:
    """Snapshot ``resource`` for planning.

    ``running_starts`` holds the start time of each task on it. A cloud
    resource without an open lease passes ``leased=False`` and the ready time
    and billing start a fresh lease would get.
    """
    d = state.estimate_duration(resource, now)
    u = max(d, run_duration(state.app.max_length, resource.nominal_speed))
    usable_at = now if ready_at is None else max(now, ready_at)
    slots = [Slot(max(now, s + d), max(now, s + u), True) for s in sorted(running_starts)]
    idle = resource.cores - len(slots)
    slots += [Slot(usable_at, usable_at, False)] * idle
    return ResourceView(
        resource=resource,
        duration=d,
        upper_duration=u,
        slots=slots,
        free_now=idle if leased and usable_at == now else 0,
        rate=state.rate(resource, now),
        leased=leased,
        lease_start=lease_start,
    )


def _fill(order: Sequence[ResourceView], caps: dict[str, int], pending: int) -> dict[str, int] | None:
    counts = {v.id: 0 for v in order}
    left = pending
    for v in order:
        take = min(caps[v.id], left)
        counts[v.id] = take
        left -= take
    return counts if left == 0 else None


def _cost(views: Sequence[ResourceView], counts: dict[str, int], now: SimTime) -> int:
    return sum(v.plan_cost(counts.get(v.id, 0), now) for v in views)


def _makespan(views: Sequence[ResourceView], counts: dict[str, int], now: SimTime) -> SimTime:
    ends = [now]
    for v in views:
        n = counts.get(v.id, 0)
        ends += [s.free_at for s in v.slots if s.busy]
        if n:
            ends.append(v.finish_times(n)[-1])
    return max(ends)


def _time_order(views: Sequence[ResourceView]) -> list[ResourceView]:
    return sorted(views, key=lambda v: (v.unit_cost(), -v.rate, v.id))


def _cost_order(views: Sequence[ResourceView]) -> list[ResourceView]:
    return sorted(views, key=lambda v: (v.unit_cost(), v.duration, v.id))


def plan_min_makespan(views: Sequence[ResourceView], pending: int, available_mc: int,
                      now: SimTime) -> Plan | None:
    """Smallest makespan over allocations of ``pending`` tasks that fit ``available_mc``.

    For a candidate finish time ``T`` each resource can take the tasks it
    would finish by ``T``; the cheapest way to place all of them is to fill
    in ascending per-task cost. Candidates are every projected finish time.
    """
    if pending == 0:
        return Plan({v.id: 0 for v in views}, _makespan(views, {}, now), _cost(views, {}, now))
    finishes = {v.id: v.finish_times(pending) for v in views}
    candidates = sorted({t for f in finishes.values() for t in f})
    order = _time_order(views)

    def caps_at(T):
        return {vid: bisect.bisect_right(f, T) for vid, f in finishes.items()}

    lo, hi = 0, len(candidates)
    while lo < hi:
        mid = (lo + hi) // 2
        if sum(caps_at(candidates[mid]).values()) >= pending:
            hi = mid
        else:
            lo = mid + 1
    for T in candidates[lo:]:
        counts = _fill(order, caps_at(T), pending)
        cost = _cost(views, counts, now)
        if cost <= available_mc:
            return Plan(counts, _makespan(views, counts, now), cost)
    return None


def plan_min_cost(views: Sequence[ResourceView], pending: int, available_mc: int,
                  deadline: SimTime, now: SimTime) -> Plan | None:
    """Cheapest allocation of ``pending`` tasks that finishes by ``deadline``."""
    caps = {v.id: bisect.bisect_right(v.finish_times(pending), deadline) for v in views}
    counts = _fill(_cost_order(views), caps, pending)
    if counts is None:
        return None
    cost = _cost(views, counts, now)
    if cost > available_mc:
        return None
    return Plan(counts, _makespan(views, counts, now), cost)


def plan_partial(views: Sequence[ResourceView], pending: int, available_mc: int,
                 now: SimTime) -> Plan:
    """As many tasks as the budget allows, cheapest placement first."""
    counts = {v.id: 0 for v in views}
    order = _cost_order(views)
    placed = 0
    while placed < pending:
        for v in order:
            counts[v.id] += 1
            if _cost(views, counts, now) <= available_mc:
                placed += 1
                break
            counts[v.id] -= 1
        else:
            break
    return Plan(counts, _makespan(views, counts, now), _cost(views, counts, now), complete=False)


def _dispatch(state: BrokerState, views: Sequence[ResourceView], plan: Plan,
              now: SimTime) -> DispatchRound:
    rnd = DispatchRound(now, plan=plan)
    for v in _cost_order(views):
        n = plan.counts.get(v.id, 0)
        if v.per_lease and n > 0 and not v.leased:
            rnd.open_leases.append(v.id)
        if v.per_lease and n == 0 and v.leased and not any(s.busy for s in v.slots):
            rnd.release_leases.append(v.id)
        per_task = math.ceil(v.unit_cost())
        for _ in range(min(n, v.free_now)):
            if not state.pending:
                break
            task_id = state.pending.popleft()
            rnd.assignments.append(
                Assignment(task_id, v.id, now, now + v.duration, per_task)
            )
    state.rounds += 1
    state.history.append(rnd)
    return rnd


def schedule_time_opt(state: BrokerState, views: Sequence[ResourceView], now: SimTime) -> DispatchRound:
    """Dispatch round aiming at the earliest finish within the budget."""
    pending = len(state.pending)
    available = state.available_mc()
    plan = plan_min_makespan(views, pending, available, now)
    if plan is None:
        plan = plan_partial(views, pending, available, now)
        if pending and sum(plan.counts.values()) == 0 and not state.running:
            state.budget_exhausted = True
            raise BudgetExhausted(
                f"{pending} tasks pending but nothing fits the remaining {available} mc"
            )
        state.budget_exhausted = state.budget_exhausted or (pending > 0)
    return _dispatch(state, views, plan, now)


def schedule_cost_opt(state: BrokerState, views: Sequence[ResourceView], now: SimTime) -> DispatchRound:
    """Dispatch round aiming at the lowest cost that still meets the deadline.

    When no allocation meets the deadline the round falls back to the
    time-optimal plan and the state is flagged ``deadline_infeasible``.
    """
    pending = len(state.pending)
    available = state.available_mc()
    plan = plan_min_cost(views, pending, available, state.deadline - state.deadline_margin, now)
    if plan is not None:
        return _dispatch(state, views, plan, now)
    state.deadline_infeasible = True
    rnd = schedule_time_opt(state, views, now)
    rnd.deadline_infeasible = True
    return rnd


def schedule(state: BrokerState, views: Sequence[ResourceView], now: SimTime) -> DispatchRound:
    if state.app.strategy is Strategy.COST_OPT:
        return schedule_cost_opt(state, views, now)
    return schedule_time_opt(state, views, now)


def mark_dispatched(state: BrokerState, assignment: Assignment, commitment_mc: int = 0) -> None:
    task = state.tasks[assignment.task_id]
    task.move(TaskState.DISPATCHED)
    state.running[assignment.task_id] = assignment.resource_id
    if commitment_mc:
        state.commitments[assignment.task_id] = commitment_mc
    state.window(assignment.resource_id).observe_from(assignment.dispatched_at)


def mark_running(state: BrokerState, task_id: str) -> None:
    state.tasks[task_id].move(TaskState.RUNNING)


def _check_running(state: BrokerState, task_id: str, resource_id: str) -> TaskSpec:
    task = state.tasks.get(task_id)
    if task is None or state.running.get(task_id) != resource_id or task.state is not TaskState.RUNNING:
        raise UnknownTask(f"task {task_id} is not running on {resource_id}")
    return task


def on_task_complete(state: BrokerState, task_id: str, resource_id: str, now: SimTime,
                     runtime: SimTime, queue: EventQueue | None = None) -> None:
    task = _check_running(state, task_id, resource_id)
    task.move(TaskState.DONE)
    del state.running[task_id]
    state.commitments.pop(task_id, None)
    state.window(resource_id).record(now, runtime)
    state.jobs[resource_id] += 1
    state.done += 1
    if state.finished:
        state.makespan = now
    if queue is not None:
        queue.push(now, EventKind.DISPATCH_TICK, "completion")


def on_task_failure(state: BrokerState, task_id: str, resource_id: str, now: SimTime,
                    queue: EventQueue | None = None) -> bool:
    """Record a failed execution. Returns True if the task was re-queued."""
    task = _check_running(state, task_id, resource_id)
    task.move(TaskState.FAILED)
    del state.running[task_id]
    state.commitments.pop(task_id, None)
    task.attempts += 1
    state.window(resource_id).reset(now)
    requeued = task.attempts <= state.retry_cap
    if requeued:
        task.move(TaskState.PENDING)
        state.pending.appendleft(task_id)
    else:
        state.failed.append(task_id)
        state.degraded = True
    if state.finished and state.makespan is None:
        state.makespan = now
    if queue is not None:
        queue.push(now, EventKind.DISPATCH_TICK, "failure")
    return requeued


def estimate_local_makespan(local: Iterable[ComputeResource], pending: int, ref_length: SimTime) -> SimTime:
    """Time for local slots alone to clear ``pending`` reference-length tasks.

    Equal-speed slots give ``ceil(pending / slots) * ref_length / speed``;
    mixed speeds are filled greedily by earliest slot.
    """
    if pending <= 0:
        return 0
    durations = [run_duration(ref_length, r.nominal_speed) for r in local for _ in range(r.cores)]
    if not durations:
        return math.inf
    if len(set(durations)) == 1:
        return -(-pending // len(durations)) * durations[0]
    heap = [(d, d) for d in durations]
    heapq.heapify(heap)
    end = 0
    for _ in range(pending):
        end, d = heapq.heappop(heap)
        heapq.heappush(heap, (end + d, d))
    return end


@dataclass(frozen=True)
class ProvisioningDecision:
    extra_nodes: int
    projected_finish: SimTime | float
    deadline_infeasible: bool


def projected_finish(pending: int, local_slots: int, extra_nodes: int, ref_length: SimTime,
                     provisioning_delay: SimTime, node_slots: int = 1) -> SimTime | float:
    """Conservative finish estimate used for burst sizing.

    With no extra nodes this is the local makespan; with any, every slot is
    counted as starting after the provisioning delay.
    """
    if pending <= 0:
        return 0
    slots = local_slots + extra_nodes * node_slots
    if slots <= 0:
        return math.inf
    rounds = -(-pending // slots)
    return rounds * ref_length + (provisioning_delay if extra_nodes else 0)


def provisioning_decision(
    pending: int,
    local_slots: int,
    deadline_remaining: SimTime,
    ref_length: SimTime,
    provisioning_delay: SimTime,
    max_nodes: int | None = None,
    node_slots: int = 1,
) -> ProvisioningDecision:
    """Fewest extra cloud nodes whose projected finish meets the deadline.

    If no node count within ``max_nodes`` meets it, returns the smallest count
    with the earliest projected finish and flags the deadline infeasible.
    """
    def f(n):
        return projected_finish(pending, local_slots, n, ref_length, provisioning_delay, node_slots)

    if f(0) <= deadline_remaining:
        return ProvisioningDecision(0, f(0), False)
    # more nodes than this cannot shorten the estimate
    useful = -(-max(pending - local_slots, 0) // node_slots)
    top = useful if max_nodes is None else min(useful, max_nodes)
    if top >= 1 and f(top) <= deadline_remaining:
        lo, hi = 1, top
        while lo < hi:
            mid = (lo + hi) // 2
            if f(mid) <= deadline_remaining:
                hi = mid
            else:
                lo = mid + 1
        return ProvisioningDecision(lo, f(lo), False)
    best = min(range(top + 1), key=lambda n: (f(n), n))
    return ProvisioningDecision(best, f(best), True)
