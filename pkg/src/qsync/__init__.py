"""Parallel coarse/fine synchronization of gated single-photon detectors."""
from .physics import (
    STATES, AttackProfile, ChannelModel, GatedDetectorModel, PulseModel, Scenario,
    ScenarioSource, accumulate_counts, arrival_time, click_probability, detector_bank,
    overlap_factor,
)
from .syncplan import (
    DelayTable, SearchPlan, SyncOutcome, assign_windows, coarse_search, fine_search_fixed,
    fine_search_nary, legacy_traversal, optimize_coarse_step, partition_ranges,
    relative_delays, run_method, sync_cost,
)

__version__ = "0.1.0"

__all__ = [
    "STATES", "AttackProfile", "ChannelModel", "GatedDetectorModel", "PulseModel", "Scenario",
    "ScenarioSource", "accumulate_counts", "arrival_time", "click_probability", "detector_bank",
    "overlap_factor", "DelayTable", "SearchPlan", "SyncOutcome", "assign_windows",
    "coarse_search", "fine_search_fixed", "fine_search_nary", "legacy_traversal",
    "optimize_coarse_step", "partition_ranges", "relative_delays", "run_method", "sync_cost",
]
