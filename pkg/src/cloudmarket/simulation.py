"""Experiment orchestration: drives the event loop for each workload shape."""

from __future__ import annotations

import hashlib
import heapq
import math
from collections import Counter, deque
from dataclasses import dataclass, field, replace

from . import broker as brk
from .engine import DAY, EventKind, EventQueue, SeededRng, SimTime, sample_task_length
from .infrastructure import (
    BillingStart,
    ComputeResource,
    CostLedger,
    Executor,
    ProviderPool,
    ResourceKind,
    ResourceLease,
    make_executor,
    release,
    run_duration,
    tariff,
)
from .marketplace import Exchange, NoMatch, CapacityRaced, SlaTerms, settle_reservation
from .report import SimReport, StreamResult, SettlementLine, LeaseLine
from .scenario import BagSpec, Scenario, StreamSpec
from .workload import Application, Strategy, TaskState, make_bag, response_time, RequestStream, make_stream

# child RNG stream indices; fixed so adding a consumer never shifts another's draws
RNG_WORKLOAD = 0
RNG_FAILURES = 1
RNG_STREAMS = 2

UNLIMITED_MC = 10**15


class EventLog:
    """Compact record of every processed event, hashed into the report."""

    def __init__(self):
        self._hash = hashlib.sha256()
        self.count = 0
        self.lines: list[str] = []

    def add(self, t: SimTime, kind: EventKind, detail: str = "") -> None:
        line = f"{t} {kind.value} {detail}".rstrip()
        self.lines.append(line)
        self._hash.update(line.encode() + b"\n")
        self.count += 1

    def digest(self) -> str:
        return self._hash.hexdigest()


@dataclass
class RunResult:
    report: SimReport
    ledger: CostLedger
    leases: list[ResourceLease]
    log: EventLog
    state: brk.BrokerState | None = None
    peak_spend_mc: int = 0


class BagRun:
    """One bag-of-tasks application on fixed resources plus optional cloud nodes."""

    def __init__(self, scenario: Scenario, app: Application, rng: SeededRng, log: EventLog):
        self.scenario = scenario
        self.spec = scenario.broker
        self.app = app
        self.log = log
        self.fail_rng = rng.child(RNG_FAILURES)
        self.queue = EventQueue()
        self.ledger = CostLedger()
        self.pool = ProviderPool(scenario.catalog, scenario.billing_start)
        self.state = brk.BrokerState(
            app,
            ledger=self.ledger,
            retry_cap=self.spec.retry_cap,
            window_ms=self.spec.window_ms or 0,
            deadline_margin=self.spec.deadline_margin_ms,
        )
        self.resources: dict[str, ComputeResource] = {r.id: r for r in scenario.resources}
        self.executors: dict[str, Executor] = {r.id: make_executor(r) for r in scenario.resources}
        self.cloud_leases: dict[str, ResourceLease] = {}
        # provisioning mode: end of the work each burst node has been committed to
        self.cloud_until: dict[str, SimTime] = {}
        self.task_leases: dict[str, ResourceLease] = {}
        self.walltime: dict[str, SimTime] = {}
        self.attempt: Counter = Counter()
        self.wake_version: Counter = Counter()
        self.wake_at: dict[str, SimTime | None] = {}
        self.starts: dict[str, SimTime] = {}
        self.on_cloud = 0
        self.on_local = 0
        self.nodes_provisioned = 0
        self.peak_spend = 0
        self.next_tick: SimTime | None = None
        self.stalled = False
        self.max_time = self.spec.max_sim_ms or max(10 * app.deadline, DAY)

    # event plumbing

    def _reschedule(self, rid: str) -> None:
        nxt = self.executors[rid].next_completion()
        if nxt is None:
            self.wake_at[rid] = None
            return
        nxt = max(nxt, self.queue.clock)
        if self.wake_at.get(rid) == nxt:
            return
        self.wake_version[rid] += 1
        self.wake_at[rid] = nxt
        self.queue.push(nxt, EventKind.TASK_COMPLETION, (rid, self.wake_version[rid]))

    def _tick_after(self, now: SimTime) -> None:
        if self.state.finished or self.stalled:
            return
        at = now + self.spec.tick_ms
        if self.next_tick is None or self.next_tick <= now:
            self.next_tick = at
            self.queue.push(at, EventKind.DISPATCH_TICK, "periodic")

    def _usable(self, rid: str, now: SimTime) -> bool:
        res = self.resources[rid]
        if not res.is_cloud:
            return True
        lease = self.cloud_leases.get(rid)
        return lease is not None and lease.usable(now)

    # execution

    def _submit(self, a: brk.Assignment, now: SimTime, commitment: int = 0) -> None:
        res = self.resources[a.resource_id]
        task = self.state.tasks[a.task_id]
        brk.mark_dispatched(self.state, a, commitment)
        self.walltime[a.task_id] = run_duration(self.app.max_length, res.nominal_speed) if self.app.max_length else 0
        ex = self.executors[a.resource_id]
        ex.submit(a.task_id, task.length, now)
        self._started(a.resource_id, now)
        self._reschedule(a.resource_id)

    def _started(self, rid: str, now: SimTime) -> None:
        res = self.resources[rid]
        for started in self.executors[rid].take_started():
            tid = started.task_id
            brk.mark_running(self.state, tid)
            self.starts[tid] = started.time
            self.attempt[tid] += 1
            self.log.add(now, EventKind.TASK_ARRIVAL, f"{tid}@{rid}")
            if res.kind is ResourceKind.GRID and (res.rate_mcps or res.rate_hourly_mc):
                lease = self.pool.lease(res, started.time, reason=f"task:{tid}")
                self.task_leases[tid] = lease
            fail_at = None
            if res.failure_prob and self.fail_rng.random() < res.failure_prob:
                span = max(1, run_duration(self.state.tasks[tid].length, res.speed_factor))
                fail_at = started.time + self.fail_rng.integers(0, span - 1)
            wall = self.walltime.get(tid, 0)
            if wall and res.kind is ResourceKind.GRID:
                kill_at = started.time + wall
                if fail_at is None or kill_at < fail_at:
                    fail_at = kill_at
            if fail_at is not None:
                self.queue.push(fail_at, EventKind.TASK_FAILURE, (rid, tid, self.attempt[tid]))

    def _close_task_lease(self, tid: str, now: SimTime) -> None:
        lease = self.task_leases.pop(tid, None)
        if lease is not None:
            release(lease, now, self.ledger)
            self._note_spend()

    def _note_spend(self) -> None:
        self.peak_spend = max(self.peak_spend, self.ledger.total_mc)

    def _on_wake(self, now: SimTime, rid: str, version: int) -> None:
        if self.wake_version[rid] != version:
            return
        self.wake_at[rid] = None
        res = self.resources[rid]
        for comp in self.executors[rid].advance(now):
            tid = comp.task_id
            self._close_task_lease(tid, now)
            runtime = now - self.starts.pop(tid)
            self.log.add(now, EventKind.TASK_COMPLETION, f"{tid}@{rid}")
            brk.on_task_complete(self.state, tid, rid, now, runtime, self.queue)
            if res.kind is ResourceKind.CLOUD:
                self.on_cloud += 1
            else:
                self.on_local += 1
        self._started(rid, now)
        self._reschedule(rid)

    def _on_failure(self, now: SimTime, rid: str, tid: str, attempt: int) -> None:
        # a completion due at the same instant wins over the failure
        due = self.wake_at.get(rid)
        if due is not None and due <= now:
            self._on_wake(now, rid, self.wake_version[rid])
        if self.attempt[tid] != attempt or self.state.running.get(tid) != rid:
            return
        if self.state.tasks[tid].state is not TaskState.RUNNING:
            return
        self.executors[rid].remove(tid, now)
        self._close_task_lease(tid, now)
        self.starts.pop(tid, None)
        self.log.add(now, EventKind.TASK_FAILURE, f"{tid}@{rid}")
        brk.on_task_failure(self.state, tid, rid, now, self.queue)
        self._started(rid, now)
        self._reschedule(rid)

    def _release_cloud(self, rid: str, now: SimTime) -> None:
        lease = self.cloud_leases.pop(rid)
        release(lease, now, self.ledger)
        self._note_spend()
        self.log.add(now, EventKind.LEASE_EXPIRED, rid)

    # dispatch policies

    def _views(self, now: SimTime) -> list[brk.ResourceView]:
        views = []
        for rid, res in self.resources.items():
            starts = list(self.executors[rid].running().values())
            if res.is_cloud:
                lease = self.cloud_leases.get(rid)
                if lease is None:
                    ready = now + res.provisioning_delay
                    start = now if self.pool.billing_start is BillingStart.REQUEST else ready
                    views.append(brk.build_view(self.state, res, now, starts,
                                                leased=False, ready_at=ready, lease_start=start))
                else:
                    views.append(brk.build_view(self.state, res, now, starts, leased=True,
                                                ready_at=lease.ready_at, lease_start=lease.start))
            else:
                views.append(brk.build_view(self.state, res, now, starts))
        return views

    def _dispatch_dbc(self, now: SimTime) -> None:
        if not self.state.pending:
            for rid in sorted(self.cloud_leases):
                if self.executors[rid].resident() == 0:
                    self._release_cloud(rid, now)
            return
        views = self._views(now)
        try:
            rnd = brk.schedule(self.state, views, now)
        except brk.BudgetExhausted:
            self.stalled = True
            for rid in sorted(self.cloud_leases):
                if self.executors[rid].resident() == 0:
                    self._release_cloud(rid, now)
            return
        by_id = {v.id: v for v in views}
        for rid in rnd.release_leases:
            self._release_cloud(rid, now)
        for rid in rnd.open_leases:
            self.cloud_leases[rid] = self.pool.lease(self.resources[rid], now, self.queue,
                                                     reason=f"vm:{rid}")
            self.log.add(now, EventKind.LEASE_READY, f"request {rid}")
        for a in rnd.assignments:
            view = by_id[a.resource_id]
            commit = 0 if view.per_lease else tariff(view.resource, view.upper_duration)
            if self.resources[a.resource_id].kind is ResourceKind.LOCAL:
                commit = 0
            self._submit(a, now, commit)
        if (not rnd.assignments and not self.state.running and not self.cloud_leases
                and not rnd.open_leases and self.state.pending):
            self.stalled = True

    def _cloud_committed(self) -> int:
        """Bill of every open burst node if each runs to the end of its committed work."""
        return sum(
            tariff(lease.resource, max(0, self.cloud_until[rid] - lease.start))
            for rid, lease in self.cloud_leases.items()
        )

    def _dispatch_provision(self, now: SimTime) -> None:
        order = sorted(
            (rid for rid in self.resources if self._usable(rid, now)),
            key=lambda rid: (self.resources[rid].is_cloud, rid),
        )
        for rid in order:
            ex = self.executors[rid]
            res = self.resources[rid]
            upper = run_duration(self.app.max_length, res.nominal_speed)
            for _ in range(ex.free_cores()):
                if not self.state.pending:
                    break
                # paid capacity only takes work whose worst-case bill still fits the budget
                spare = self.state.available_mc() - self._cloud_committed()
                commit = 0
                if res.kind is ResourceKind.GRID:
                    commit = tariff(res, upper)
                    if commit > spare:
                        break
                elif res.is_cloud:
                    lease = self.cloud_leases[rid]
                    until = max(self.cloud_until[rid], now + upper)
                    extra = tariff(res, until - lease.start) - tariff(res, self.cloud_until[rid] - lease.start)
                    if extra > spare:
                        break
                    self.cloud_until[rid] = until
                tid = self.state.pending.popleft()
                a = brk.Assignment(tid, rid, now, now + run_duration(self.app.ref_length, res.nominal_speed), commit)
                self._submit(a, now, commit)
        # an idle burst node is only costing money
        for rid in sorted(self.cloud_leases):
            if self.executors[rid].resident() == 0 and self.cloud_leases[rid].usable(now):
                self._release_cloud(rid, now)
        if not self.state.pending:
            for rid in sorted(self.cloud_leases):
                if self.executors[rid].resident() == 0:
                    self._release_cloud(rid, now)

    def _provision_at_start(self) -> brk.ProvisioningDecision:
        itype = self.scenario.instance(self.spec.instance_type)
        local = [r for r in self.resources.values() if r.kind is ResourceKind.LOCAL]
        slots = sum(r.cores for r in local)
        pending = len(self.state.pending)
        ref = self.app.ref_length
        decision = brk.provisioning_decision(
            pending, slots, self.app.deadline, ref, itype.provisioning_delay,
            max_nodes=itype.cap, node_slots=itype.cores,
        )
        if brk.estimate_local_makespan(local, pending, ref) <= self.app.deadline:
            decision = brk.ProvisioningDecision(0, decision.projected_finish, False)
        n = decision.extra_nodes
        # local nodes are free; only cloud time is charged against the budget
        while n > 0:
            finish = brk.projected_finish(pending, slots, n, ref, itype.provisioning_delay, itype.cores)
            if n * tariff(itype.resource("probe"), int(finish)) <= self.app.budget_mc:
                break
            n -= 1
        if n:
            for lease in self.pool.provision(itype.name, n, 0, self.queue):
                res = lease.resource
                self.resources[res.id] = res
                self.executors[res.id] = make_executor(res)
                self.cloud_leases[res.id] = lease
                self.cloud_until[res.id] = lease.ready_at
                self.log.add(0, EventKind.LEASE_READY, f"request {res.id}")
        self.nodes_provisioned = n
        self.state.deadline_infeasible = decision.deadline_infeasible or n < decision.extra_nodes
        return decision

    def run(self) -> None:
        provisioning = self.app.strategy is Strategy.DEADLINE_PROVISIONING
        if provisioning and self.state.pending:
            self._provision_at_start()
        dispatch = self._dispatch_provision if provisioning else self._dispatch_dbc
        self.queue.push(0, EventKind.DISPATCH_TICK, "start")
        while self.queue:
            ev = self.queue.advance()
            now = ev.fire_at
            if now > self.max_time:
                self.stalled = True
                break
            if ev.kind is EventKind.TASK_COMPLETION:
                self._on_wake(now, *ev.payload)
            elif ev.kind is EventKind.TASK_FAILURE:
                self._on_failure(now, *ev.payload)
            elif ev.kind is EventKind.LEASE_READY:
                lease = ev.payload
                if lease.is_open:
                    self.log.add(now, ev.kind, lease.resource.id)
                    dispatch(now)
            elif ev.kind is EventKind.DISPATCH_TICK:
                if ev.payload == "periodic" and self.next_tick == now:
                    self.next_tick = None
                self.log.add(now, ev.kind, str(ev.payload))
                dispatch(now)
                if not provisioning:
                    self._tick_after(now)
            if self.state.finished or self.stalled:
                if not self.state.running:
                    for rid in sorted(self.cloud_leases):
                        self._release_cloud(rid, now)
                if self.stalled and not self.state.running:
                    break
        end = self.queue.clock
        for rid in sorted(self.cloud_leases):
            self._release_cloud(rid, end)
        for tid in sorted(self.task_leases):
            self._close_task_lease(tid, end)


def _bag_report(scenario: Scenario, seed: int, run: BagRun) -> SimReport:
    st = run.state
    app = run.app
    makespan = st.makespan if st.makespan is not None else (run.queue.clock if app.tasks else 0)
    incomplete = len(st.pending) + len(st.running) + len(st.failed)
    met = incomplete == 0 and makespan <= app.deadline
    jobs = {rid: st.jobs.get(rid, 0) for rid in sorted(run.resources)}
    rates = {rid: r.rate_mcps for rid, r in sorted(run.resources.items())}
    orgs = {rid: r.org for rid, r in sorted(run.resources.items())}
    return SimReport(
        scenario=scenario.name,
        seed=seed,
        strategy=app.strategy.value,
        makespan_ms=makespan,
        deadline_ms=app.deadline,
        deadline_met=met,
        tasks_total=len(app.tasks),
        tasks_completed=st.done,
        tasks_failed=len(st.failed),
        tasks_unscheduled=len(st.pending) + len(st.running),
        jobs_per_resource=jobs,
        resource_rates_mcps=rates,
        resource_orgs=orgs,
        tasks_on_local=run.on_local,
        tasks_on_cloud=run.on_cloud,
        nodes_provisioned=run.nodes_provisioned,
        budget_mc=scenario.broker.budget_mc,
        spent_mc=run.ledger.total_mc,
        budget_exhausted=st.budget_exhausted,
        deadline_infeasible=st.deadline_infeasible,
        degraded=st.degraded,
        dispatch_rounds=st.rounds,
    )


def _run_bag(scenario: Scenario, seed: int, rng: SeededRng, log: EventLog) -> RunResult:
    spec: BagSpec = scenario.workload
    b = scenario.broker
    # no budget given: anything the resources cost is acceptable
    budget = b.budget_mc if b.budget_mc is not None else UNLIMITED_MC
    app = make_bag(spec.n, spec.mean_ms, spec.jitter_ms, b.deadline_ms, budget, b.strategy,
                   rng.child(RNG_WORKLOAD), app_id=scenario.name)
    run = BagRun(scenario, app, rng, log)
    run.run()
    report = _bag_report(scenario, seed, run)
    return RunResult(report, run.ledger, run.pool.leases, log, run.state, run.peak_spend)


@dataclass
class StreamRun:
    """FCFS request service on dynamically instantiated nodes up to a cap."""

    stream: RequestStream
    scenario: Scenario
    instance_type: str
    rng: SeededRng
    log: EventLog
    jitter: SimTime = 0
    initial_nodes: int = 0
    queue: EventQueue = field(default_factory=EventQueue)
    ledger: CostLedger = field(default_factory=CostLedger)

    def run(self) -> tuple[dict[str, SimTime], ProviderPool]:
        itype = replace(self.scenario.instance(self.instance_type), cap=self.stream.resource_cap)
        pool = ProviderPool([itype], self.scenario.billing_start, prefix=f"{self.stream.stream_id}/")
        nodes: dict[str, ResourceLease] = {}
        busy: dict[str, str] = {}
        idle: list[str] = []  # heap of ready, unoccupied node ids
        booting = 0
        waiting: deque[str] = deque()
        service: dict[str, SimTime] = {}
        done: dict[str, SimTime] = {}
        arrivals = {f"r{i}": t for i, t in enumerate(self.stream.arrivals)}
        for rid, t in arrivals.items():
            service[rid] = sample_task_length(self.rng, self.stream.service_length, self.jitter)
            self.queue.push(t, EventKind.REQUEST_ARRIVAL, rid)
        if self.initial_nodes:
            for lease in pool.provision(itype.name, min(self.initial_nodes, itype.cap), 0):
                # pre-warmed before the stream starts
                lease.ready_at = 0
                nodes[lease.resource.id] = lease
                heapq.heappush(idle, lease.resource.id)

        def dispatch(now):
            nonlocal booting
            while waiting and idle:
                nid = heapq.heappop(idle)
                rid = waiting.popleft()
                busy[nid] = rid
                self.queue.push(now + run_duration(service[rid], nodes[nid].resource.speed_factor),
                                EventKind.TASK_COMPLETION, (nid, rid))
            want = len(waiting) - booting
            room = itype.cap - len(nodes)
            if want > 0 and room > 0:
                for lease in pool.provision(itype.name, min(want, room), now, self.queue):
                    nodes[lease.resource.id] = lease
                    booting += 1

        while self.queue:
            ev = self.queue.advance()
            now = ev.fire_at
            if ev.kind is EventKind.REQUEST_ARRIVAL:
                self.log.add(now, ev.kind, f"{self.stream.stream_id}:{ev.payload}")
                waiting.append(ev.payload)
            elif ev.kind is EventKind.TASK_COMPLETION:
                nid, rid = ev.payload
                self.log.add(now, ev.kind, f"{self.stream.stream_id}:{rid}@{nid}")
                del busy[nid]
                heapq.heappush(idle, nid)
                done[rid] = now
            elif ev.kind is EventKind.LEASE_READY:
                self.log.add(now, ev.kind, f"{self.stream.stream_id}:{ev.payload.resource.id}")
                booting -= 1
                heapq.heappush(idle, ev.payload.resource.id)
            dispatch(now)
        end = self.queue.clock
        for nid in sorted(nodes):
            release(nodes[nid], end, self.ledger)
        return done, pool


def _run_streams(scenario: Scenario, seed: int, rng: SeededRng, log: EventLog) -> RunResult:
    spec: StreamSpec = scenario.workload
    base = rng.child(RNG_STREAMS)
    ledger = CostLedger()
    leases: list[ResourceLease] = []
    results = []
    makespan = 0
    for ci, cap in enumerate(spec.caps):
        streams = make_stream(spec.load_levels, spec.service_ms, cap, spec.horizon_ms)
        for li, stream in enumerate(streams):
            # one draw sequence per load level, shared by every cap
            srun = StreamRun(stream, scenario, spec.instance_type, base.child(li), log,
                             spec.service_jitter_ms, spec.initial_nodes)
            done, pool = srun.run()
            summary = response_time(stream, done)
            for rec in srun.ledger.records:
                ledger.add(*rec)
            leases += pool.leases
            makespan = max(makespan, srun.queue.clock)
            results.append(StreamResult(
                stream_id=stream.stream_id,
                requests=len(stream.arrivals),
                cap=cap,
                mean_response_ms=round(summary.mean, 3),
                max_response_ms=summary.max,
                nodes_used=len(pool.leases),
                spent_mc=srun.ledger.total_mc,
            ))
    report = SimReport(
        scenario=scenario.name,
        seed=seed,
        strategy="stream",
        makespan_ms=makespan,
        deadline_ms=scenario.broker.deadline_ms,
        deadline_met=scenario.broker.deadline_ms is None or makespan <= scenario.broker.deadline_ms,
        spent_mc=ledger.total_mc,
        budget_mc=scenario.broker.budget_mc,
        streams=results,
    )
    return RunResult(report, ledger, leases, log, None, ledger.total_mc)


def _run_exchange(scenario: Scenario, log: EventLog) -> tuple[list[SettlementLine], list[str]]:
    spec = scenario.exchange
    ex = Exchange()
    queue = EventQueue()
    for offer in spec.offers:
        ex.publish_offer(offer)
    for o in spec.outages:
        ex.add_outage(o)
        queue.push(o.start, EventKind.OUTAGE_CHANGE, f"down {o.offer_id}")
        queue.push(o.end, EventKind.OUTAGE_CHANGE, f"up {o.offer_id}")
    for rs in spec.requirements:
        queue.push(rs.submit_ms, EventKind.TASK_ARRIVAL, rs)
    unmatched = []
    order = []
    while queue:
        ev = queue.advance()
        now = ev.fire_at
        if ev.kind is EventKind.TASK_ARRIVAL:
            rs = ev.payload
            log.add(now, EventKind.TASK_ARRIVAL, f"requirement {rs.requirement.req_id}")
            try:
                lines = ex.match(rs.requirement, now)
                booked = ex.reserve(rs.requirement, lines, SlaTerms(rs.penalty_mc_per_violation), queue)
                order += [r.reservation_id for r, _ in booked]
            except (NoMatch, CapacityRaced):
                unmatched.append(rs.requirement.req_id)
        elif ev.kind is EventKind.RESERVATION_START:
            log.add(now, ev.kind, ev.payload)
            ex.activate(ev.payload, now)
        elif ev.kind is EventKind.LEASE_EXPIRED:
            log.add(now, ev.kind, ev.payload)
            ex.complete(ev.payload, now)
        else:
            log.add(now, ev.kind, str(ev.payload))
        ex.observe(now)
    lines = []
    for rid in order:
        res = ex.reservations[rid]
        sla = ex.slas[res.sla_id]
        s = settle_reservation(ex, rid)
        lines.append(SettlementLine(
            reservation_id=rid,
            sla_id=sla.sla_id,
            offer_id=res.offer_id,
            consumer=sla.consumer,
            provider=sla.provider,
            slots=res.slots,
            price_mc=sla.price_mc,
            violations=sla.violations,
            price_due_mc=s.price_due_mc,
            penalty_mc=s.penalty_mc,
            net_mc=s.net_mc,
            excess_penalty_mc=s.excess_penalty_mc,
        ))
    return lines, unmatched


def run(scenario: Scenario, seed: int | None = None, strategy: Strategy | None = None) -> RunResult:
    """Run ``scenario`` to quiescence and build its report.

    A deadline sweep is ignored here except for its first entry; use ``run_all``
    to get one result per swept deadline.
    """
    if scenario.broker.deadline_sweep_ms:
        scenario = scenario.variants()[0]
    if strategy is not None:
        scenario = scenario.with_strategy(strategy)
    seed = scenario.seed if seed is None else seed
    rng = SeededRng(seed)
    log = EventLog()
    wl = scenario.workload
    if isinstance(wl, BagSpec) and wl.n > 0:
        result = _run_bag(scenario, seed, rng, log)
    elif isinstance(wl, StreamSpec):
        result = _run_streams(scenario, seed, rng, log)
    else:
        b = scenario.broker
        result = RunResult(
            SimReport(
                scenario=scenario.name,
                seed=seed,
                strategy=b.strategy.value,
                makespan_ms=0,
                deadline_ms=b.deadline_ms,
                deadline_met=True,
                budget_mc=b.budget_mc,
            ),
            CostLedger(), [], log,
        )
    if scenario.exchange is not None:
        lines, unmatched = _run_exchange(scenario, log)
        result.report.settlements = lines
        result.report.unmatched_requirements = unmatched
        result.report.exchange_net_mc = sum(l.net_mc for l in lines)
    result.report.leases = [
        LeaseLine(l.lease_id, l.resource.id, l.start, l.end, l.billed, l.reason)
        for l in result.leases
    ] if isinstance(wl, BagSpec) else []
    result.report.spent_mc = result.ledger.total_mc
    result.report.event_count = log.count
    result.report.event_log_sha256 = log.digest()
    return result


def run_all(scenario: Scenario, seed: int | None = None, strategy: Strategy | None = None) -> list[RunResult]:
    return [run(s, seed, strategy) for s in scenario.variants()]
