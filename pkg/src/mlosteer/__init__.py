"""Discrete-event simulator for packet steering on multi-link Wi-Fi devices."""

from .scenario import Scenario, ScenarioError, load_scenario, parse_scenario
from .sim import RunResult, Simulator, run

__all__ = [
    "RunResult",
    "Scenario",
    "ScenarioError",
    "Simulator",
    "load_scenario",
    "parse_scenario",
    "run",
]
__version__ = "0.1.0"
