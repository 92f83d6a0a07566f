"""Discrete-event digital twin of a device-edge-cloud-HPC compute continuum."""

from .engine import EngineConfig, KPIReport, Objective, compute_kpis, fitness, forecast, run, step
from .scenario import (
    Scenario,
    ScenarioError,
    SynthesisParams,
    generate_synthetic,
    load_fixture,
    parse_scenario,
    serialize_scenario,
    validate_scenario,
)
from .scheduler import BestFit, FirstFit, Weighted, WeightVector
from .twin import JobSpec, LinkSpec, NodeSpec, TwinState

__version__ = "0.1.0"
