"""Age-of-Information sampling and preemption control under heavy-tailed service."""

from .baselines import ThresholdPolicy, aoi_np_solve, threshold_cost, zero_wait_cost
from .distributions import Exponential, LogNormal, Lomax, Tabulated, from_samples, make_distribution
from .grids import Grids, grids_for
from .simulator import SimConfig, SimResult, compare, simulate
from .solver import SolvedPolicy, StationaryPolicy, policy_evaluate, policy_iteration

__version__ = "0.1.0"

__all__ = [
    "Exponential", "Lomax", "LogNormal", "Tabulated", "from_samples", "make_distribution",
    "Grids", "grids_for", "policy_iteration", "policy_evaluate", "SolvedPolicy",
    "StationaryPolicy", "ThresholdPolicy", "aoi_np_solve", "threshold_cost", "zero_wait_cost",
    "SimConfig", "SimResult", "simulate", "compare",
]
