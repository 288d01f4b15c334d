"""Experiment reports and their table / CSV / JSON renderings."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import IO, Iterable, Sequence

from .engine import SECOND, SimTime
from .infrastructure import format_dollars

FORMATS = ("table", "csv", "json")

# fields whose values legitimately change with the seed
STOCHASTIC_FIELDS = frozenset({
    "seed", "makespan_ms", "deadline_met", "tasks_completed", "tasks_failed", "tasks_unscheduled",
    "jobs_per_resource", "tasks_on_local", "tasks_on_cloud", "nodes_provisioned", "spent_mc",
    "spent_usd", "budget_exhausted", "deadline_infeasible", "degraded", "dispatch_rounds",
    "streams", "leases", "event_count", "event_log_sha256",
})


@dataclass
class StreamResult:
    stream_id: str
    requests: int
    cap: int
    mean_response_ms: float
    max_response_ms: SimTime
    nodes_used: int
    spent_mc: int


@dataclass
class SettlementLine:
    reservation_id: str
    sla_id: str
    offer_id: str
    consumer: str
    provider: str
    slots: int
    price_mc: int
    violations: int
    price_due_mc: int
    penalty_mc: int
    net_mc: int
    excess_penalty_mc: int


@dataclass
class LeaseLine:
    lease_id: str
    resource_id: str
    start: SimTime
    end: SimTime | None
    billed_mc: int | None
    reason: str


@dataclass
class SimReport:
    scenario: str
    seed: int
    strategy: str
    makespan_ms: SimTime
    deadline_ms: SimTime | None
    deadline_met: bool
    tasks_total: int = 0
    tasks_completed: int = 0
    tasks_failed: int = 0
    tasks_unscheduled: int = 0
    jobs_per_resource: dict[str, int] = field(default_factory=dict)
    resource_rates_mcps: dict[str, int] = field(default_factory=dict)
    resource_orgs: dict[str, str] = field(default_factory=dict)
    tasks_on_local: int = 0
    tasks_on_cloud: int = 0
    nodes_provisioned: int = 0
    budget_mc: int | None = None
    spent_mc: int = 0
    budget_exhausted: bool = False
    deadline_infeasible: bool = False
    degraded: bool = False
    dispatch_rounds: int = 0
    streams: list[StreamResult] = field(default_factory=list)
    settlements: list[SettlementLine] = field(default_factory=list)
    unmatched_requirements: list[str] = field(default_factory=list)
    exchange_net_mc: int = 0
    leases: list[LeaseLine] = field(default_factory=list)
    event_count: int = 0
    event_log_sha256: str = ""

    @property
    def spent_usd(self) -> str:
        return format_dollars(self.spent_mc)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["spent_usd"] = self.spent_usd
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def _seconds(ms: SimTime | None) -> str:
    if ms is None:
        return "-"
    return f"{ms / SECOND:g}"


def _grid(headers: Sequence[str], rows: Iterable[Sequence[object]]) -> str:
    rows = [[str(c) for c in r] for r in rows]
    widths = [max([len(h)] + [len(r[i]) for r in rows]) for i, h in enumerate(headers)]
    line = lambda cells: " | ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
    out = [line(headers), "-+-".join("-" * w for w in widths)]
    out += [line(r) for r in rows]
    return "\n".join(out) + "\n"


PROVISIONING_HEADERS = (
    "Deadline (Seconds)", "Execution Time", "Deadline Met?", "Cloud Nodes Provisioned",
    "Tasks on Local Resources", "Tasks on Cloud (EC2)", "Budget Spent (US$)",
)

STREAM_HEADERS = ("Stream", "Requests", "Resource Cap", "Mean Response (s)", "Max Response (s)",
                  "Nodes Used", "Budget Spent (US$)")


def _provisioning_table(reports: Sequence[SimReport]) -> str:
    rows = [
        (_seconds(r.deadline_ms), _seconds(r.makespan_ms), "Yes" if r.deadline_met else "No",
         r.nodes_provisioned, r.tasks_on_local, r.tasks_on_cloud, r.spent_usd)
        for r in reports
    ]
    return _grid(PROVISIONING_HEADERS, rows)


def _dbc_table(reports: Sequence[SimReport]) -> str:
    ids = list(dict.fromkeys(rid for r in reports for rid in r.jobs_per_resource))
    first = reports[0]
    headers = ["Organization", "Resource", "Rate (Cents per second*1000)"]
    headers += [f"Total Jobs ({r.strategy})" for r in reports]
    rows = []
    for rid in ids:
        row = [first.resource_orgs.get(rid, ""), rid, first.resource_rates_mcps.get(rid, "")]
        row += [r.jobs_per_resource.get(rid, 0) for r in reports]
        rows.append(row)
    rows.append(["Total Price / Budget Consumed", "", ""] + [f"{r.spent_usd}$" for r in reports])
    rows.append(["Time to Complete Execution", "", ""] + [f"{r.makespan_ms / 60_000:.1f} min" for r in reports])
    rows.append(["Deadline Met?", "", ""] + ["Yes" if r.deadline_met else "No" for r in reports])
    return _grid(headers, rows)


def _stream_table(reports: Sequence[SimReport]) -> str:
    rows = [
        (s.stream_id, s.requests, s.cap, f"{s.mean_response_ms / SECOND:.3f}",
         _seconds(s.max_response_ms), s.nodes_used, format_dollars(s.spent_mc))
        for r in reports
        for s in r.streams
    ]
    return _grid(STREAM_HEADERS, rows)


def _settlement_table(reports: Sequence[SimReport]) -> str:
    headers = ("Reservation", "SLA", "Offer", "Provider", "Slots", "Violations",
               "Price (US$)", "Penalty (US$)", "Net (US$)")
    rows = [
        (s.reservation_id, s.sla_id, s.offer_id, s.provider, s.slots, s.violations,
         format_dollars(s.price_due_mc), format_dollars(s.penalty_mc), format_dollars(s.net_mc))
        for r in reports
        for s in r.settlements
    ]
    return _grid(headers, rows)


def render_table(reports: Sequence[SimReport]) -> str:
    parts = []
    prov = [r for r in reports if r.strategy == "provision"]
    dbc = [r for r in reports if r.strategy in ("time-opt", "cost-opt") and r.tasks_total]
    streams = [r for r in reports if r.streams]
    if prov:
        parts.append(_provisioning_table(prov))
    if dbc:
        parts.append(_dbc_table(dbc))
    if streams:
        parts.append(_stream_table(streams))
    if any(r.settlements for r in reports):
        parts.append(_settlement_table(reports))
    if not parts:
        parts.append(_grid(("Scenario", "Strategy", "Execution Time", "Budget Spent (US$)"),
                           [(r.scenario, r.strategy, _seconds(r.makespan_ms), r.spent_usd) for r in reports]))
    return "\n".join(parts)


def flatten(value, prefix: str = "") -> dict[str, str]:
    """Dotted-key view of a report dict, with every leaf rendered as text."""
    out: dict[str, str] = {}
    if isinstance(value, dict):
        for k in sorted(value):
            out.update(flatten(value[k], f"{prefix}{k}."))
    elif isinstance(value, list):
        for i, v in enumerate(value):
            out.update(flatten(v, f"{prefix}{i}."))
    else:
        key = prefix[:-1]
        if value is None:
            out[key] = ""
        elif isinstance(value, bool):
            out[key] = "true" if value else "false"
        else:
            out[key] = str(value)
    return out


def csv_rows(reports: Sequence[SimReport]) -> list[dict[str, str]]:
    """One flat row per report, every row padded to the union of columns.

    Lease detail is left out; it is available in the JSON form.
    """
    rows = []
    for r in reports:
        d = r.to_dict()
        d.pop("leases")
        rows.append(flatten(d))
    columns = sorted({k for row in rows for k in row})
    return [{c: row.get(c, "") for c in columns} for row in rows]


def render_csv(reports: Sequence[SimReport]) -> str:
    rows = csv_rows(reports)
    columns = list(rows[0]) if rows else []
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\r\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def render_json(reports: Sequence[SimReport]) -> str:
    if len(reports) == 1:
        return reports[0].to_json()
    return json.dumps([r.to_dict() for r in reports], sort_keys=True, indent=2) + "\n"


def emit_report(report: SimReport | Sequence[SimReport], format: str, sink: IO[str]) -> None:
    """Write one or more reports to ``sink`` as ``table``, ``csv`` or ``json``."""
    reports = [report] if isinstance(report, SimReport) else list(report)
    if format == "table":
        text = render_table(reports)
    elif format == "csv":
        text = render_csv(reports)
    elif format == "json":
        text = render_json(reports)
    else:
        raise ValueError(f"unknown format {format!r}; expected one of {FORMATS}")
    sink.write(text)
