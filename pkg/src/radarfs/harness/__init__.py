"""Simulation engine, benchmark runner, calibration and CLI plumbing."""

from .engine import ModelRef, RunConfig, SimulationReport, resolve_strategy, run_event_mode, run_simulation

__all__ = [
    "ModelRef",
    "RunConfig",
    "SimulationReport",
    "resolve_strategy",
    "run_event_mode",
    "run_simulation",
]
