"""Discrete-event simulator of an SDN-controlled, energy-aware PON fronthaul."""

from .energy import DutyCycle, PowerModel, energy_savings, power_all_on, power_one_pair_off
from .scenario import Scenario, ScenarioError, load_scenario, parse_scenario
from .simulation import Network, RunResult, run
from .topology import Topology, build_reference_topology, load_topology, path_links, validate

__all__ = [
    "DutyCycle",
    "Network",
    "PowerModel",
    "RunResult",
    "Scenario",
    "ScenarioError",
    "Topology",
    "build_reference_topology",
    "energy_savings",
    "load_scenario",
    "load_topology",
    "parse_scenario",
    "path_links",
    "power_all_on",
    "power_one_pair_off",
    "run",
    "validate",
]

__version__ = "0.1.0"
