from .environment import Environment, LumenSegment, contact_project
from .scenario import (LocalizationNoise, Scenario, ScenarioError, SimCommand,
                       load_scenario, load_scenario_file, scenario_path)
from .engine import SimEngine, SimState, localization_sample, retraction_moment_test
from .trace import TRACE_COLUMNS, TraceRecord, export_trace, parse_trace

__all__ = [
    "Environment", "LumenSegment", "contact_project",
    "LocalizationNoise", "Scenario", "ScenarioError", "SimCommand",
    "load_scenario", "load_scenario_file", "scenario_path",
    "SimEngine", "SimState", "localization_sample", "retraction_moment_test",
    "TRACE_COLUMNS", "TraceRecord", "export_trace", "parse_trace",
]
