"""Posted-price cloud exchange: offers, matchmaking, reservations and SLA settlement."""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple

from .engine import SECOND, EventKind, EventQueue, SimError, SimTime


class MarketError(SimError):
    pass


class DuplicateOfferId(MarketError):
    pass


class NoMatch(MarketError):
    pass


class CapacityRaced(MarketError):
    pass


class ReservationState(enum.Enum):
    HELD = "Held"
    ACTIVE = "Active"
    COMPLETED = "Completed"
    CANCELLED = "Cancelled"


@dataclass(frozen=True)
class Offer:
    offer_id: str
    provider_id: str
    instance_type: str
    rate_mcps: int
    capacity: int
    window_start: SimTime
    window_end: SimTime
    speed_factor: Fraction = Fraction(1)

    def __post_init__(self):
        object.__setattr__(self, "speed_factor", Fraction(self.speed_factor))
        if self.capacity < 1:
            raise ValueError(f"offer {self.offer_id}: capacity must be >= 1")
        if self.window_end <= self.window_start:
            raise ValueError(f"offer {self.offer_id}: empty window")
        if self.rate_mcps < 0:
            raise ValueError(f"offer {self.offer_id}: negative rate")


@dataclass(frozen=True)
class Requirement:
    req_id: str
    slots: int
    max_rate_mcps: int
    window_start: SimTime
    window_end: SimTime
    min_speed: Fraction = Fraction(0)
    budget_mc: int | None = None
    consumer: str = "broker"

    def __post_init__(self):
        object.__setattr__(self, "min_speed", Fraction(self.min_speed))
        if self.slots < 1:
            raise ValueError(f"requirement {self.req_id}: slots must be >= 1")
        if self.window_end <= self.window_start:
            raise ValueError(f"requirement {self.req_id}: empty window")

    @property
    def window_ms(self) -> SimTime:
        return self.window_end - self.window_start


def slot_price(rate_mcps: int, window_ms: SimTime) -> int:
    """Price of holding one slot for the whole window, per started second."""
    return rate_mcps * -(-window_ms // SECOND)


class MatchLine(NamedTuple):
    offer: Offer
    slots: int

    def price(self, window_ms: SimTime) -> int:
        return self.slots * slot_price(self.offer.rate_mcps, window_ms)


def rank_key(offer: Offer):
    return (offer.rate_mcps, -offer.speed_factor, offer.offer_id)


@dataclass
class SlaTerms:
    penalty_mc_per_violation: int = 0


@dataclass
class Sla:
    sla_id: str
    consumer: str
    provider: str
    offer_id: str
    rate_mcps: int
    slots: int
    window_start: SimTime
    window_end: SimTime
    price_mc: int
    penalty_mc_per_violation: int
    violations: int = 0

    @property
    def penalty_owed_mc(self) -> int:
        return self.violations * self.penalty_mc_per_violation


@dataclass
class Reservation:
    reservation_id: str
    sla_id: str
    offer_id: str
    slots: int
    window_start: SimTime
    window_end: SimTime
    state: ReservationState = ReservationState.HELD
    # delivered slot-milliseconds, accumulated while Active
    delivered_slot_ms: int = 0
    violation_times: list[SimTime] = field(default_factory=list)

    def covers(self, t: SimTime) -> bool:
        return self.window_start <= t < self.window_end

    @property
    def reserved_slot_ms(self) -> int:
        return self.slots * (self.window_end - self.window_start)


@dataclass(frozen=True)
class Outage:
    offer_id: str
    start: SimTime
    end: SimTime
    slots_down: int


@dataclass(frozen=True)
class Settlement:
    sla_id: str
    price_due_mc: int
    penalty_mc: int
    net_mc: int
    excess_penalty_mc: int


class Exchange:
    """Single market maker for one simulation run."""

    def __init__(self):
        self.offers: dict[str, Offer] = {}
        self.reservations: dict[str, Reservation] = {}
        self.slas: dict[str, Sla] = {}
        self.outages: list[Outage] = []
        self._ids = itertools.count(1)

    def publish_offer(self, offer: Offer) -> None:
        if offer.offer_id in self.offers:
            raise DuplicateOfferId(offer.offer_id)
        self.offers[offer.offer_id] = offer

    def _holding(self, offer_id: str) -> list[Reservation]:
        return [
            r
            for r in self.reservations.values()
            if r.offer_id == offer_id and r.state in (ReservationState.HELD, ReservationState.ACTIVE)
        ]

    def free_capacity(self, offer_id: str, start: SimTime, end: SimTime) -> int:
        """Capacity left on ``offer_id`` at the busiest instant of ``[start, end)``."""
        offer = self.offers[offer_id]
        overlapping = [r for r in self._holding(offer_id) if r.window_start < end and start < r.window_end]
        points = {start} | {r.window_start for r in overlapping if start <= r.window_start < end}
        peak = max(
            (sum(r.slots for r in overlapping if r.covers(p)) for p in points), default=0
        )
        return offer.capacity - peak

    def feasible(self, req: Requirement, now: SimTime) -> list[tuple[Offer, int]]:
        out = []
        for offer in self.offers.values():
            if offer.rate_mcps > req.max_rate_mcps or offer.speed_factor < req.min_speed:
                continue
            if offer.window_end <= now:
                continue
            if not (offer.window_start <= req.window_start and req.window_end <= offer.window_end):
                continue
            free = self.free_capacity(offer.offer_id, req.window_start, req.window_end)
            if free >= 1:
                out.append((offer, free))
        out.sort(key=lambda of: rank_key(of[0]))
        return out

    def match(self, req: Requirement, now: SimTime = 0) -> list[MatchLine]:
        """Cheapest set of offer slots covering ``req``, best-ranked offers first."""
        if req.window_start < now:
            raise NoMatch(f"{req.req_id}: window started at t={req.window_start}, before t={now}")
        lines = []
        left = req.slots
        for offer, free in self.feasible(req, now):
            take = min(free, left)
            lines.append(MatchLine(offer, take))
            left -= take
            if left == 0:
                break
        if left:
            raise NoMatch(f"{req.req_id}: {req.slots - left} of {req.slots} slots available")
        if req.budget_mc is not None:
            total = sum(line.price(req.window_ms) for line in lines)
            if total > req.budget_mc:
                raise NoMatch(f"{req.req_id}: cheapest match costs {total} mc > budget {req.budget_mc}")
        return lines

    def reserve(self, req: Requirement, lines: list[MatchLine], terms: SlaTerms,
                queue: EventQueue | None = None) -> list[tuple[Reservation, Sla]]:
        """Hold the matched slots; one reservation and SLA per offer line."""
        for line in lines:
            if line.offer.offer_id not in self.offers:
                raise CapacityRaced(f"offer {line.offer.offer_id} withdrawn")
            if self.free_capacity(line.offer.offer_id, req.window_start, req.window_end) < line.slots:
                raise CapacityRaced(f"offer {line.offer.offer_id} no longer has {line.slots} free slots")
        booked = []
        for line in lines:
            n = next(self._ids)
            sla = Sla(
                sla_id=f"S{n:04d}",
                consumer=req.consumer,
                provider=line.offer.provider_id,
                offer_id=line.offer.offer_id,
                rate_mcps=line.offer.rate_mcps,
                slots=line.slots,
                window_start=req.window_start,
                window_end=req.window_end,
                price_mc=line.price(req.window_ms),
                penalty_mc_per_violation=terms.penalty_mc_per_violation,
            )
            res = Reservation(f"R{n:04d}", sla.sla_id, line.offer.offer_id, line.slots,
                              req.window_start, req.window_end)
            self.slas[sla.sla_id] = sla
            self.reservations[res.reservation_id] = res
            if queue is not None:
                queue.push(res.window_start, EventKind.RESERVATION_START, res.reservation_id)
                queue.push(res.window_end, EventKind.LEASE_EXPIRED, res.reservation_id)
            booked.append((res, sla))
        return booked

    def cancel(self, reservation_id: str) -> None:
        res = self.reservations[reservation_id]
        if res.state in (ReservationState.HELD, ReservationState.ACTIVE):
            res.state = ReservationState.CANCELLED

    def activate(self, reservation_id: str, now: SimTime) -> None:
        res = self.reservations[reservation_id]
        if res.state is not ReservationState.HELD:
            return
        if now != res.window_start:
            raise MarketError(f"{reservation_id} can only start at t={res.window_start}")
        res.state = ReservationState.ACTIVE

    def complete(self, reservation_id: str, now: SimTime) -> None:
        res = self.reservations[reservation_id]
        if res.state is ReservationState.ACTIVE:
            res.delivered_slot_ms = self.delivered_slot_ms(res)
            res.state = ReservationState.COMPLETED

    def add_outage(self, outage: Outage) -> None:
        self.outages.append(outage)

    def _down(self, offer_id: str, t: SimTime) -> int:
        return sum(o.slots_down for o in self.outages if o.offer_id == offer_id and o.start <= t < o.end)

    def delivered_slots(self, res: Reservation, t: SimTime) -> int:
        """Slots actually delivered to ``res`` at ``t``; earlier reservations are served first."""
        offer = self.offers[res.offer_id]
        up = max(0, offer.capacity - self._down(res.offer_id, t))
        for other in sorted(self._holding(res.offer_id) + [res], key=lambda r: r.reservation_id):
            if other is res:
                return min(res.slots, up)
            if other.covers(t):
                up = max(0, up - other.slots)
        return 0

    def delivered_slot_ms(self, res: Reservation) -> int:
        cuts = {res.window_start, res.window_end}
        for o in self.outages:
            if o.offer_id == res.offer_id:
                cuts |= {t for t in (o.start, o.end) if res.window_start < t < res.window_end}
        for other in self._holding(res.offer_id):
            cuts |= {t for t in (other.window_start, other.window_end)
                     if res.window_start < t < res.window_end}
        edges = sorted(cuts)
        return sum(self.delivered_slots(res, a) * (b - a) for a, b in zip(edges, edges[1:]))

    def observe(self, now: SimTime) -> None:
        """Count a violation on every active reservation short of slots at ``now``."""
        for res in self.reservations.values():
            if res.state is ReservationState.ACTIVE and res.covers(now):
                if self.delivered_slots(res, now) < res.slots:
                    if not res.violation_times or res.violation_times[-1] != now:
                        res.violation_times.append(now)
                        self.slas[res.sla_id].violations += 1


@dataclass(frozen=True)
class Actuals:
    delivered_slot_ms: int
    reserved_slot_ms: int
    violations: int


def settle(sla: Sla, actuals: Actuals) -> Settlement:
    """Charge for the delivered share of the contract minus linear penalties.

    The net charge never goes below zero; any penalty beyond the price due is
    reported as ``excess_penalty_mc`` and not charged.
    """
    if actuals.reserved_slot_ms <= 0:
        price_due = 0
    else:
        delivered = min(actuals.delivered_slot_ms, actuals.reserved_slot_ms)
        price_due = sla.price_mc * delivered // actuals.reserved_slot_ms
    penalty = actuals.violations * sla.penalty_mc_per_violation
    return Settlement(
        sla_id=sla.sla_id,
        price_due_mc=price_due,
        penalty_mc=penalty,
        net_mc=max(0, price_due - penalty),
        excess_penalty_mc=max(0, penalty - price_due),
    )


def settle_reservation(exchange: Exchange, reservation_id: str) -> Settlement:
    res = exchange.reservations[reservation_id]
    if res.state not in (ReservationState.COMPLETED, ReservationState.CANCELLED):
        raise MarketError(f"{reservation_id} is still {res.state.value}")
    sla = exchange.slas[res.sla_id]
    return settle(sla, Actuals(res.delivered_slot_ms, res.reserved_slot_ms, sla.violations))
