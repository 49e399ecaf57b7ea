"""FEEL protocol simulation on a synthetic task, plus sampling oracles."""
from .oracles import (
    DeviationEstimate,
    Estimate,
    mc_active_counts,
    mc_beacon_outage_xi,
    mc_expected_reciprocal,
    mc_local_deviation,
    mc_outage,
    mc_server_outage_tau,
)
from .task import EmptyBatch, SyntheticTask, build_task, local_gradient
from .training import (
    Constants,
    DeviceRound,
    RoundRecord,
    TrainingReport,
    estimate_constants,
    probe_points,
    run_training,
    simulate_round,
)

__all__ = [
    "Constants", "DeviationEstimate", "DeviceRound", "EmptyBatch", "Estimate", "RoundRecord",
    "SyntheticTask", "TrainingReport", "build_task", "estimate_constants", "local_gradient",
    "mc_active_counts", "mc_beacon_outage_xi", "mc_expected_reciprocal", "mc_local_deviation",
    "mc_outage", "mc_server_outage_tau", "probe_points", "run_training", "simulate_round",
]
