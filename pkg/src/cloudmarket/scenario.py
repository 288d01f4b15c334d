"""Scenario files: JSON documents validated against ``scenarios/schema.json``."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema

from .engine import SimTime
from .infrastructure import (
    AllocationPolicy,
    BillingMode,
    BillingStart,
    ComputeResource,
    InstanceType,
    ResourceKind,
)
from .marketplace import Offer, Outage, Requirement
from .workload import Strategy


class ScenarioError(Exception):
    pass


class ParseError(ScenarioError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class ValidationError(ScenarioError):
    def __init__(self, message: str, field: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class BagSpec:
    n: int
    mean_ms: SimTime
    jitter_ms: SimTime = 0


@dataclass(frozen=True)
class StreamSpec:
    load_levels: tuple[int, ...]
    horizon_ms: SimTime
    service_ms: SimTime
    caps: tuple[int, ...]
    instance_type: str
    service_jitter_ms: SimTime = 0
    initial_nodes: int = 0


@dataclass(frozen=True)
class BrokerSpec:
    strategy: Strategy = Strategy.TIME_OPT
    deadline_ms: SimTime | None = None
    budget_mc: int | None = None
    retry_cap: int = 3
    tick_ms: SimTime = 10_000
    window_ms: SimTime | None = None
    deadline_margin_ms: SimTime = 0
    instance_type: str | None = None
    max_sim_ms: SimTime | None = None
    deadline_sweep_ms: tuple[SimTime, ...] = ()


@dataclass(frozen=True)
class RequirementSpec:
    requirement: Requirement
    submit_ms: SimTime = 0
    penalty_mc_per_violation: int = 0


@dataclass(frozen=True)
class ExchangeSpec:
    offers: tuple[Offer, ...] = ()
    requirements: tuple[RequirementSpec, ...] = ()
    outages: tuple[Outage, ...] = ()


@dataclass(frozen=True)
class Scenario:
    name: str
    seed: int = 0
    description: str = ""
    resources: tuple[ComputeResource, ...] = ()
    catalog: tuple[InstanceType, ...] = ()
    billing_start: BillingStart = BillingStart.REQUEST
    workload: BagSpec | StreamSpec | None = None
    broker: BrokerSpec = field(default_factory=BrokerSpec)
    exchange: ExchangeSpec | None = None
    calibration: dict[str, Any] = field(default_factory=dict, compare=False)

    def with_strategy(self, strategy: Strategy) -> Scenario:
        return replace(self, broker=replace(self.broker, strategy=strategy))

    def with_deadline(self, deadline_ms: SimTime) -> Scenario:
        return replace(self, broker=replace(self.broker, deadline_ms=deadline_ms, deadline_sweep_ms=()))

    def variants(self) -> list[Scenario]:
        """One scenario per swept deadline, or just ``self`` when nothing is swept."""
        if not self.broker.deadline_sweep_ms:
            return [self]
        return [self.with_deadline(d) for d in self.broker.deadline_sweep_ms]

    def instance(self, name: str) -> InstanceType:
        for it in self.catalog:
            if it.name == name:
                return it
        raise KeyError(name)


def schema() -> dict:
    return json.loads(resources.files("cloudmarket").joinpath("scenarios/schema.json").read_text())


def _speed(value, default=1) -> Fraction:
    if value is None:
        return Fraction(default)
    return Fraction(value) if isinstance(value, str) else Fraction(value).limit_denominator(10**6)


def _deepest(error: jsonschema.ValidationError) -> jsonschema.ValidationError:
    # oneOf/anyOf failures hide the useful message in their context; the branch
    # that got furthest into the document is the one the author meant
    while error.context:
        error = max(error.context, key=lambda e: (len(e.absolute_path), e.validator != "type"))
    return error


def _path(error: jsonschema.ValidationError) -> str:
    parts = [str(p) for p in error.absolute_path]
    if error.validator == "additionalProperties":
        extra = sorted(set(error.instance) - set(error.schema.get("properties", {})))
        parts += extra[:1]
    return ".".join(parts) or "<root>"


def _resource(d: dict) -> ComputeResource:
    kind = ResourceKind(d.get("kind", "grid"))
    delay = d.get("provisioning_delay_ms", 60_000 if kind is ResourceKind.CLOUD else 0)
    return ComputeResource(
        id=d["id"],
        org=d.get("org", ""),
        kind=kind,
        cores=d.get("cores", 1),
        speed_factor=_speed(d.get("speed_factor")),
        advertised_speed=None if "advertised_speed" not in d else _speed(d["advertised_speed"]),
        rate_mcps=d.get("rate_mcps", 0),
        rate_hourly_mc=d.get("rate_hourly_mc", 0),
        billing_mode=BillingMode(d.get("billing_mode", "per_second")),
        provisioning_delay=delay,
        allocation_policy=AllocationPolicy(d.get("allocation_policy", "space_shared")),
        failure_prob=d.get("failure_prob", 0.0),
    )


def _instance(d: dict) -> InstanceType:
    return InstanceType(
        name=d["name"],
        rate_mcps=d["rate_mcps"],
        rate_hourly_mc=d.get("rate_hourly_mc", 0),
        billing_mode=BillingMode(d.get("billing_mode", "per_second")),
        cores=d.get("cores", 1),
        speed_factor=_speed(d.get("speed_factor")),
        provisioning_delay=d.get("provisioning_delay_ms", 60_000),
        cap=d.get("cap"),
        allocation_policy=AllocationPolicy(d.get("allocation_policy", "space_shared")),
    )


def _exchange(d: dict) -> ExchangeSpec:
    offers = tuple(
        Offer(
            offer_id=o["offer_id"],
            provider_id=o["provider_id"],
            instance_type=o.get("instance_type", ""),
            rate_mcps=o["rate_mcps"],
            capacity=o["capacity"],
            speed_factor=_speed(o.get("speed_factor")),
            window_start=o["window_start_ms"],
            window_end=o["window_end_ms"],
        )
        for o in d.get("offers", [])
    )
    reqs = tuple(
        RequirementSpec(
            Requirement(
                req_id=r["req_id"],
                slots=r["slots"],
                max_rate_mcps=r["max_rate_mcps"],
                window_start=r["window_start_ms"],
                window_end=r["window_end_ms"],
                min_speed=_speed(r.get("min_speed"), default=0),
                budget_mc=r.get("budget_mc"),
                consumer=r.get("consumer", "broker"),
            ),
            submit_ms=r.get("submit_ms", 0),
            penalty_mc_per_violation=r.get("penalty_mc_per_violation", 0),
        )
        for r in d.get("requirements", [])
    )
    outages = tuple(
        Outage(o["offer_id"], o["start_ms"], o["end_ms"], o["slots_down"]) for o in d.get("outages", [])
    )
    return ExchangeSpec(offers, reqs, outages)


def _build(doc: dict) -> Scenario:
    def guarded(fieldname, fn, *args):
        try:
            return fn(*args)
        except (ValueError, ZeroDivisionError) as exc:
            raise ValidationError(str(exc), fieldname) from None

    resources_ = tuple(
        guarded(f"resources.{i}", _resource, r) for i, r in enumerate(doc.get("resources", []))
    )
    catalog = tuple(guarded(f"catalog.{i}", _instance, c) for i, c in enumerate(doc.get("catalog", [])))

    workload: BagSpec | StreamSpec | None = None
    wl = doc.get("workload")
    if wl and "bag" in wl:
        b = wl["bag"]
        workload = BagSpec(b["n"], b["mean_ms"], b.get("jitter_ms", 0))
        if workload.jitter_ms > workload.mean_ms:
            raise ValidationError("jitter_ms exceeds mean_ms", "workload.bag.jitter_ms")
    elif wl and "stream" in wl:
        s = wl["stream"]
        workload = StreamSpec(
            load_levels=tuple(s["load_levels"]),
            horizon_ms=s["horizon_ms"],
            service_ms=s["service_ms"],
            caps=tuple(s["caps"]),
            instance_type=s["instance_type"],
            service_jitter_ms=s.get("service_jitter_ms", 0),
            initial_nodes=s.get("initial_nodes", 0),
        )
        if workload.service_jitter_ms > workload.service_ms:
            raise ValidationError("service_jitter_ms exceeds service_ms", "workload.stream.service_jitter_ms")

    b = doc.get("broker", {})
    broker = BrokerSpec(
        strategy=Strategy(b.get("strategy", "time-opt")),
        deadline_ms=b.get("deadline_ms"),
        budget_mc=b.get("budget_mc"),
        retry_cap=b.get("retry_cap", 3),
        tick_ms=b.get("tick_ms", 10_000),
        window_ms=b.get("window_ms"),
        deadline_margin_ms=b.get("deadline_margin_ms", 0),
        instance_type=b.get("instance_type"),
        max_sim_ms=b.get("max_sim_ms"),
        deadline_sweep_ms=tuple(b.get("deadline_sweep_ms", ())),
    )
    exchange = guarded("exchange", _exchange, doc["exchange"]) if "exchange" in doc else None

    scenario = Scenario(
        name=doc["name"],
        seed=doc.get("seed", 0),
        description=doc.get("description", ""),
        resources=resources_,
        catalog=catalog,
        billing_start=BillingStart(doc.get("billing_start", "request")),
        workload=workload,
        broker=broker,
        exchange=exchange,
        calibration=doc.get("calibration", {}),
    )
    check_references(scenario)
    return scenario


def check_references(scenario: Scenario) -> None:
    """Cross-section checks that the schema cannot express."""
    ids = [r.id for r in scenario.resources]
    dup = sorted({i for i in ids if ids.count(i) > 1})
    if dup:
        raise ValidationError(f"duplicate resource id {dup[0]!r}", "resources")
    names = [c.name for c in scenario.catalog]
    if len(set(names)) != len(names):
        raise ValidationError("duplicate instance type name", "catalog")

    wl = scenario.workload
    strategy = scenario.broker.strategy
    if isinstance(wl, BagSpec) and wl.n > 0:
        if scenario.broker.deadline_ms is None and not scenario.broker.deadline_sweep_ms:
            raise ValidationError("a bag workload needs a deadline", "broker.deadline_ms")
        if strategy is Strategy.DEADLINE_PROVISIONING:
            if scenario.broker.instance_type not in names:
                raise ValidationError(
                    f"unknown instance type {scenario.broker.instance_type!r}", "broker.instance_type"
                )
            if not any(r.kind is ResourceKind.LOCAL for r in scenario.resources):
                raise ValidationError("provisioning needs at least one local resource", "resources")
        elif not scenario.resources:
            raise ValidationError(f"{strategy.value} needs at least one resource", "resources")
    if isinstance(wl, StreamSpec) and wl.instance_type not in names:
        raise ValidationError(f"unknown instance type {wl.instance_type!r}", "workload.stream.instance_type")
    if scenario.exchange:
        offer_ids = [o.offer_id for o in scenario.exchange.offers]
        for i, o in enumerate(scenario.exchange.outages):
            if o.offer_id not in offer_ids:
                raise ValidationError(f"unknown offer {o.offer_id!r}", f"exchange.outages.{i}.offer_id")
            if o.end <= o.start:
                raise ValidationError("outage ends before it starts", f"exchange.outages.{i}.end_ms")


def parse_scenario(text: str) -> Scenario:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno, exc.colno) from None
    validator = jsonschema.Draft202012Validator(schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: (list(e.absolute_path), e.message))
    if errors:
        err = _deepest(errors[0])
        raise ValidationError(err.message, _path(err))
    return _build(doc)


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"{path}: {exc.strerror}") from None
    return parse_scenario(text)


def golden_path(name: str) -> Path:
    """Path of a bundled scenario, e.g. ``golden_path("table-14-4")``."""
    return Path(str(resources.files("cloudmarket").joinpath(f"scenarios/{name}.json")))


def load_golden(name: str) -> Scenario:
    return load_scenario(golden_path(name))
