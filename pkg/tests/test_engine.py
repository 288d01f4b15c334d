import random

import pytest

from cloudmarket.engine import (
    EmptyQueue,
    Event,
    EventKind,
    EventQueue,
    InvalidJitter,
    PastEvent,
    SeededRng,
    advance,
    push_event,
    sample_task_length,
)


def test_push_then_pop_same_event():
    q = EventQueue()
    ev = q.push(0, EventKind.TASK_ARRIVAL, "x")
    assert q.advance() is ev
    assert q.clock == 0


def test_simultaneous_events_pop_in_insertion_order():
    q = EventQueue()
    q.push(10, EventKind.TASK_ARRIVAL, "A")
    q.push(10, EventKind.TASK_ARRIVAL, "B")
    assert [q.advance().payload, q.advance().payload] == ["A", "B"]


def test_thousand_random_events_come_out_sorted():
    r = random.Random(7)
    q = EventQueue()
    times = [r.randrange(0, 10_000) for _ in range(1000)]
    for i, t in enumerate(times):
        q.push(t, EventKind.DISPATCH_TICK, i)
    out = [q.advance() for _ in range(1000)]
    assert [e.fire_at for e in out] == sorted(times)
    # stable within equal timestamps
    assert [e.payload for e in out] == [i for _, i in sorted((t, i) for i, t in enumerate(times))]


def test_advance_moves_clock():
    q = EventQueue()
    q.push(5, EventKind.TASK_COMPLETION)
    assert advance(q).fire_at == 5 and q.clock == 5
    q.push(7, EventKind.TASK_COMPLETION)
    q.push(3 + 5, EventKind.TASK_COMPLETION)
    assert [q.advance().fire_at, q.advance().fire_at] == [7, 8]


def test_interleaved_pushes_keep_total_order():
    r = random.Random(3)
    q = EventQueue()
    popped, pushed = [], []
    for i in range(50):
        e = q.push(r.randrange(0, 100), EventKind.TASK_ARRIVAL, i)
        pushed.append(e)
    while q:
        e = q.advance()
        popped.append(e)
        if r.random() < 0.5 and len(pushed) < 400:
            pushed.append(q.push(q.clock + r.randrange(0, 30), EventKind.TASK_ARRIVAL, len(pushed)))
    assert popped == sorted(pushed, key=lambda e: (e.fire_at, e.seq))


def test_past_event_rejected():
    q = EventQueue()
    q.push(10, EventKind.TASK_ARRIVAL)
    q.advance()
    with pytest.raises(PastEvent):
        q.push(9, EventKind.TASK_ARRIVAL)
    with pytest.raises(PastEvent):
        push_event(q, Event(3, 99, EventKind.TASK_ARRIVAL))


def test_empty_queue():
    with pytest.raises(EmptyQueue):
        EventQueue().advance()
    with pytest.raises(EmptyQueue):
        EventQueue().peek()


def test_push_event_keeps_sequence_numbers_unique():
    q = EventQueue()
    push_event(q, Event(4, 10, EventKind.TASK_ARRIVAL, "a"))
    e = q.push(4, EventKind.TASK_ARRIVAL, "b")
    assert e.seq == 11
    assert [q.advance().payload, q.advance().payload] == ["a", "b"]


def test_task_length_within_jitter():
    rng = SeededRng(1)
    draws = [sample_task_length(rng, 300_000, 20_000) for _ in range(500)]
    assert all(280_000 <= d <= 320_000 for d in draws)
    assert len(set(draws)) > 100


def test_zero_jitter_is_exact():
    assert sample_task_length(SeededRng(9), 5000, 0) == 5000


@pytest.mark.parametrize("jitter", [-1, 5001])
def test_bad_jitter(jitter):
    with pytest.raises(InvalidJitter):
        sample_task_length(SeededRng(0), 5000, jitter)


def test_seeded_draws_repeat():
    a = SeededRng(42)
    b = SeededRng(42)
    first = [sample_task_length(a, 1000, 500) for _ in range(10)]
    assert first == [sample_task_length(b, 1000, 500) for _ in range(10)]
    # frozen from the first run; guards against silent generator changes
    assert first == FROZEN_SEED_42


FROZEN_SEED_42 = [589, 1274, 1155, 939, 933, 1359, 586, 1198, 701, 594]


def test_children_are_independent_of_parent_consumption():
    parent = SeededRng(5)
    before = parent.child(1).integers(0, 10**9)
    for _ in range(100):
        parent.random()
    assert parent.child(1).integers(0, 10**9) == before
    assert SeededRng(5).child(0).integers(0, 10**9) != before


def test_seed_range():
    with pytest.raises(ValueError):
        SeededRng(-1)
