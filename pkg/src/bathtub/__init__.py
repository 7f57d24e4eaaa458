"""Bathtub (single-reservoir MFD) traffic models: accumulation-based, M-model,
fixed-step trip-based and event-based engines, with calibration, aggregation
and comparison tools."""

from .aggregate import LinkRecord, OdAssignment, RouteShare, aggregate_network_state, derive_tdd, speed_dispersion
from .analysis import AlignedSeries, calibrate_alpha, convergence_test, exponential_smooth, normalized_rmse
from .demand import ClassCoefficientSchedule, DemandProfile, fast_changing_profile, slow_changing_profile
from .engines import (
    SimConfig,
    SimResult,
    run_accumulation_based,
    run_event_based,
    run_m_model,
    run_scenario_suite,
    run_trip_based_fixed,
)
from .mfd import MfdParams, calibrate, flow_at_density, speed_at_accumulation
from .tdd import DynamicTdd, TddCategory, TddLevel, TddSpec, generate_entries, steady_distance

__version__ = "0.1.0"
