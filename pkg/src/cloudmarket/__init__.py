"""Discrete-event simulation of deadline/budget brokering on grids and clouds.

The usual entry points are ``load_scenario`` / ``load_golden`` to read a
scenario file, ``run`` to simulate it, and ``emit_report`` to render the
result. The submodules expose the building blocks individually.
"""

from .engine import EventKind, EventQueue, SeededRng, SimTime
from .infrastructure import ComputeResource, CostLedger, ResourceKind, tariff
from .marketplace import Exchange, Offer, Requirement, settle
from .report import SimReport, emit_report
from .scenario import ParseError, Scenario, ScenarioError, ValidationError, load_golden, load_scenario
from .simulation import RunResult, run, run_all
from .workload import Strategy, make_bag

__all__ = [
    "ComputeResource", "CostLedger", "EventKind", "EventQueue", "Exchange", "Offer", "ParseError",
    "Requirement", "ResourceKind", "RunResult", "Scenario", "ScenarioError", "SeededRng", "SimReport",
    "SimTime", "Strategy", "ValidationError", "emit_report", "load_golden", "load_scenario",
    "make_bag", "run", "run_all", "settle", "tariff",
]
__version__ = "0.1.0"
