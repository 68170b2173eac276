"""Differentially private distributed projected gradient descent for EV charging."""

from .descent import DescentConfig, DescentResult, oracle_optimum, run, suboptimality
from .evcharging import EVObjective, generate_base_load, generate_specs, subopt_constants
from .model import AdjacencyParams, ChargingSpec, PrivacyParams, Scenario, ScenarioConfig, build_scenario
from .privacy import NoiseSchedule, budget_spent, build_schedule, sample_noise, sensitivity_bound
from .projection import BACKEND, BoxBudgetSet, project, project_oracle

__version__ = "0.1.0"

__all__ = [
    "AdjacencyParams",
    "BACKEND",
    "BoxBudgetSet",
    "ChargingSpec",
    "DescentConfig",
    "DescentResult",
    "EVObjective",
    "NoiseSchedule",
    "PrivacyParams",
    "Scenario",
    "ScenarioConfig",
    "budget_spent",
    "build_scenario",
    "build_schedule",
    "generate_base_load",
    "generate_specs",
    "oracle_optimum",
    "project",
    "project_oracle",
    "run",
    "sample_noise",
    "sensitivity_bound",
    "subopt_constants",
    "suboptimality",
]
