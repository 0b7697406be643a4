"""Wearable fall detection with robot-assisted confirmation."""

__version__ = "1.0.0"

from .config import RunConfig
from .fedsim import ClassificationMetrics, run_experiment
from .locmodel import LocalizationModel
from .mission import SimScenario, combined_reliability, plan_path, run_scenario

__all__ = [
    "RunConfig",
    "ClassificationMetrics",
    "run_experiment",
    "LocalizationModel",
    "SimScenario",
    "combined_reliability",
    "plan_path",
    "run_scenario",
]
