"""Simulation experiments, replacement scenarios and the command line."""

from geoxfer.harness.experiments import (
    ExperimentSpec,
    ResultRecord,
    RunSetup,
    emit_results,
    run_experiment,
    simulate,
)
from geoxfer.harness.replacement import ReplacementScenario, run_replacement

__all__ = [
    "ExperimentSpec",
    "ReplacementScenario",
    "ResultRecord",
    "RunSetup",
    "emit_results",
    "run_experiment",
    "run_replacement",
    "simulate",
]
