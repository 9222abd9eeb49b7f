"""Switched state observers for cascaded CSTRs."""

from .model import CaseId, PlantParams, simulate_plant
from .runner import PerturbationSpec, RunResult, monte_carlo, run_case
from .scenario import ObserverConfig, Scenario, load_scenario, save_scenario

__all__ = [
    "CaseId", "ObserverConfig", "PerturbationSpec", "PlantParams", "RunResult", "Scenario",
    "load_scenario", "monte_carlo", "run_case", "save_scenario", "simulate_plant",
]
__version__ = "0.1.0"
