import itertools
import math
import random
from fractions import Fraction

import pytest

from cloudmarket import broker as brk
from cloudmarket.engine import EventKind, EventQueue, SeededRng
from cloudmarket.infrastructure import ComputeResource, ResourceKind, tariff
from cloudmarket.workload import Strategy, TaskState, make_bag

from oracles import brute_force_schedule, min_cost_within, min_makespan_within


def state(n, length=10_000, deadline=10**9, budget=10**9, strategy=Strategy.TIME_OPT, **kw):
    app = make_bag(n, length, 0, deadline, budget, strategy, SeededRng(0))
    return brk.BrokerState(app, **kw)


def res(rid, cores=1, speed=1, rate=0, kind=ResourceKind.GRID):
    return ComputeResource(rid, cores=cores, speed_factor=speed, rate_mcps=rate, kind=kind)


def views(st, resources, now=0):
    return [brk.build_view(st, r, now) for r in resources]


def start(st, rnd):
    for a in rnd:
        brk.mark_dispatched(st, a)
        brk.mark_running(st, a.task_id)


class TestTimeOpt:
    def test_single_resource_takes_everything(self):
        st = state(10)
        rnd = brk.schedule_time_opt(st, views(st, [res("r", cores=10)]), 0)
        assert len(rnd) == 10 and {a.resource_id for a in rnd} == {"r"}

    def test_uses_costly_resources_when_affordable(self):
        st = state(20)
        rnd = brk.schedule_time_opt(st, views(st, [res("cheap", cores=4, rate=2),
                                                    res("dear", cores=4, rate=90)]), 0)
        counts = {rid: sum(a.resource_id == rid for a in rnd) for rid in ("cheap", "dear")}
        assert counts == {"cheap": 4, "dear": 4}
        # 20 tasks on 8 cores need three waves; the spare third-wave slots go to the cheap one
        assert rnd.plan.makespan == 30_000
        assert rnd.plan.counts == {"cheap": 12, "dear": 8}

    @pytest.mark.parametrize("budget", [40, 100, 250, 400, 1000])
    def test_tight_budget_matches_exhaustive_search(self, budget):
        rs = [res("a", rate=1), res("b", speed=2, rate=10)]
        st = state(4, budget=budget)
        plan = brk.plan_min_makespan(views(st, rs), 4, st.available_mc(), 0)
        outcomes = brute_force_schedule(4, 10_000, [(1, Fraction(1), 1), (1, Fraction(2), 10)])
        best = min_makespan_within(outcomes, budget)
        if best is None:
            assert plan is None
        else:
            assert plan.makespan == best and plan.cost_mc <= budget

    def test_dispatch_goes_cheapest_first(self):
        st = state(2)
        rnd = brk.schedule_time_opt(st, views(st, [res("z", rate=1), res("a", rate=5)]), 0)
        assert [a.resource_id for a in rnd] == ["z", "a"]

    def test_budget_exhausted(self):
        st = state(3, budget=5)
        with pytest.raises(brk.BudgetExhausted):
            brk.schedule_time_opt(st, views(st, [res("r", rate=100)]), 0)
        assert st.budget_exhausted

    def test_partial_plan_when_budget_short(self):
        st = state(5, budget=25)
        rnd = brk.schedule_time_opt(st, views(st, [res("r", cores=5, rate=1)]), 0)
        # each 10 s task costs 10 mc, so only two fit
        assert len(rnd) == 2 and not rnd.plan.complete and st.budget_exhausted


class TestCostOpt:
    def test_cheap_resource_dominates(self):
        st = state(6, strategy=Strategy.COST_OPT)
        rnd = brk.schedule_cost_opt(st, views(st, [res("cheap", cores=6, rate=2),
                                                    res("dear", cores=6, rate=90)]), 0)
        assert {a.resource_id for a in rnd} == {"cheap"}

    @pytest.mark.parametrize("deadline", [10_000, 20_000, 25_000, 30_000, 40_000])
    def test_binding_deadline_matches_exhaustive_search(self, deadline):
        rs = [res("a", rate=1), res("b", speed=2, rate=10)]
        st = state(4, deadline=deadline, strategy=Strategy.COST_OPT)
        plan = brk.plan_min_cost(views(st, rs), 4, st.available_mc(), deadline, 0)
        outcomes = brute_force_schedule(4, 10_000, [(1, Fraction(1), 1), (1, Fraction(2), 10)])
        best = min_cost_within(outcomes, deadline)
        if best is None:
            assert plan is None
        else:
            assert plan.cost_mc == best and plan.makespan <= deadline

    def test_infeasible_deadline_falls_back(self):
        st = state(4, deadline=5_000, strategy=Strategy.COST_OPT)
        rnd = brk.schedule_cost_opt(st, views(st, [res("r", cores=4, rate=1)]), 0)
        assert rnd.deadline_infeasible and st.deadline_infeasible
        assert len(rnd) == 4

    def test_margin_tightens_deadline(self):
        rs = [res("slow", rate=1), res("fast", cores=2, rate=50)]
        loose = state(2, deadline=20_000, strategy=Strategy.COST_OPT)
        tight = state(2, deadline=20_000, strategy=Strategy.COST_OPT, deadline_margin=5_000)
        a = brk.schedule_cost_opt(loose, views(loose, rs), 0)
        b = brk.schedule_cost_opt(tight, views(tight, rs), 0)
        assert a.plan.counts == {"slow": 2, "fast": 0}
        assert b.plan.counts == {"slow": 1, "fast": 1}


class TestCloudViews:
    def test_unleased_instance_opens_lease(self):
        st = state(2, budget=10**9)
        cloud = ComputeResource("vm", cores=2, rate_mcps=10, kind=ResourceKind.CLOUD,
                                provisioning_delay=1000)
        v = brk.build_view(st, cloud, 0, leased=False, ready_at=1000, lease_start=0)
        rnd = brk.schedule_time_opt(st, [v], 0)
        assert rnd.open_leases == ["vm"] and len(rnd) == 0
        # the whole instance is billed from request to the last finish
        assert rnd.plan.cost_mc == tariff(cloud, 11_000)


class TestLocalMakespan:
    def test_formula(self):
        assert brk.estimate_local_makespan([res("l", cores=4)], 200, 5000) == 250_000

    def test_single(self):
        assert brk.estimate_local_makespan([res("l")], 1, 5000) == 5000

    def test_nothing_pending(self):
        assert brk.estimate_local_makespan([res("l")], 0, 5000) == 0

    def test_mixed_speeds(self):
        got = brk.estimate_local_makespan([res("a"), res("b", speed=2)], 3, 10_000)
        assert got == 10_000


class TestProvisioning:
    def test_no_burst_needed(self):
        d = brk.provisioning_decision(10, 2, 100_000, 5000, 30_000)
        assert d == brk.ProvisioningDecision(0, 25_000, False)

    def test_nine_nodes(self):
        d = brk.provisioning_decision(200, 1, 100_000, 5000, 0)
        assert d.extra_nodes == 9 and not d.deadline_infeasible

    def test_against_scan(self):
        r = random.Random(0)
        for _ in range(200):
            p, l, D, L, delay = (r.randint(0, 300), r.randint(0, 8), r.randint(1, 400) * 1000,
                                 r.randint(1, 20) * 1000, r.randint(0, 60) * 1000)
            cap = r.choice([None, r.randint(0, 40)])
            assert brk.provisioning_decision(p, l, D, L, delay, cap) == scan(p, l, D, L, delay, cap)

    def test_monotone_in_deadline(self):
        counts = [brk.provisioning_decision(200, 2, d * 1000, 5000, 25_000, 20).extra_nodes
                  for d in (60, 120, 180, 1200)]
        assert counts == sorted(counts, reverse=True)


def scan(p, l, D, L, delay, cap):
    def f(n):
        if p == 0:
            return 0
        if l + n == 0:
            return math.inf
        return math.ceil(p / (l + n)) * L + (delay if n else 0)

    top = max(p - l, 0) if cap is None else min(max(p - l, 0), cap)
    for n in range(top + 1):
        if f(n) <= D:
            return brk.ProvisioningDecision(n, f(n), False)
    best = min(range(top + 1), key=lambda n: (f(n), n))
    return brk.ProvisioningDecision(best, f(best), True)


class TestCallbacks:
    def test_completion_updates_window_and_makespan(self):
        st = state(1)
        rnd = brk.schedule(st, views(st, [res("r")]), 0)
        start(st, rnd)
        q = EventQueue()
        brk.on_task_complete(st, "t0", "r", 10_000, 10_000, q)
        assert st.window("r").count(10_000) == 1
        assert st.finished and st.makespan == 10_000 and st.jobs["r"] == 1
        assert q.advance().kind is EventKind.DISPATCH_TICK

    def test_unknown_task(self):
        st = state(1)
        with pytest.raises(brk.UnknownTask):
            brk.on_task_complete(st, "t0", "r", 0, 0)

    def test_failure_requeues_then_gives_up(self):
        st = state(1, retry_cap=1)
        r = [res("r")]
        start(st, brk.schedule(st, views(st, r), 0))
        assert brk.on_task_failure(st, "t0", "r", 5)
        assert st.tasks["t0"].state is TaskState.PENDING and list(st.pending) == ["t0"]
        start(st, brk.schedule(st, views(st, r, 5), 5))
        assert not brk.on_task_failure(st, "t0", "r", 9)
        assert st.tasks["t0"].state is TaskState.FAILED and st.degraded
        assert st.failed == ["t0"]

    def test_slow_resource_loses_rank(self):
        st = state(4)
        fast, slow = res("fast"), res("slow")
        # both advertise the same speed; "slow" turns out to take four times as long
        for rid in ("fast", "slow"):
            st.window(rid).observe_from(0)
        for t in (10_000, 20_000, 30_000, 40_000):
            st.window("fast").record(t, 10_000)
        st.window("slow").record(40_000, 40_000)
        now = 40_000
        assert st.rate(fast, now) > st.rate(slow, now)
        vs = views(st, [fast, slow], now)
        assert {v.id: v.duration for v in vs} == {"fast": 10_000, "slow": 40_000}
        plan = brk.plan_min_makespan(vs, 4, st.available_mc(), now)
        assert plan.counts == {"fast": 4, "slow": 0}

    def test_failed_resource_reconsidered_by_cost(self):
        st = state(1, strategy=Strategy.COST_OPT)
        rs = [res("x", rate=1), res("y", rate=5)]
        start(st, brk.schedule(st, views(st, rs), 0))
        assert st.running == {"t0": "x"}
        brk.on_task_failure(st, "t0", "x", 100)
        rnd = brk.schedule(st, views(st, rs, 100), 100)
        # x is still the cheapest way to meet the deadline, so it is chosen again
        assert [a.resource_id for a in rnd] == ["x"]

    def test_failed_resource_dropped_when_unaffordable(self):
        st = state(1, budget=15)
        rs = [res("x", rate=1), res("y", rate=1)]
        start(st, brk.schedule(st, views(st, rs), 0))
        st.ledger.add("burn", 5, "test")
        brk.on_task_failure(st, "t0", "x", 100)
        rnd = brk.schedule(st, views(st, rs, 100), 100)
        assert len(rnd) == 1


def test_four_tasks_two_resources_all_assignments():
    # every 2^4 labelled assignment reduces to a count vector; compare both planners
    rs = [(2, Fraction(1), 3), (1, Fraction(3, 2), 7)]
    outcomes = brute_force_schedule(4, 9_000, rs)
    labelled = set()
    for combo in itertools.product([0, 1], repeat=4):
        counts = (combo.count(0), combo.count(1))
        labelled.add(counts)
    assert len(labelled) == 5 == len(outcomes)
