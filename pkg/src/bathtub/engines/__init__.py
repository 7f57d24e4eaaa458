from .common import ConfigError, SimConfig, SimResult, SimulationError, Trip, TripLog, schedule_entries
from .continuous import run_accumulation_based, run_m_model
from .suite import DEFAULT_VARIANTS, SuiteResult, parse_variant, run_scenario_suite, run_variant
from .trip_based import run_event_based, run_trip_based_fixed

__all__ = [
    "ConfigError",
    "SimConfig",
    "SimResult",
    "SimulationError",
    "Trip",
    "TripLog",
    "schedule_entries",
    "run_accumulation_based",
    "run_m_model",
    "run_trip_based_fixed",
    "run_event_based",
    "run_scenario_suite",
    "run_variant",
    "parse_variant",
    "SuiteResult",
    "DEFAULT_VARIANTS",
]
