"""Pricing discretely monitored double knock-out calls under GBM with plain
Monte Carlo, Subset Simulation and multilevel Monte Carlo."""

from .contract import BarrierContract, discount, in_event, payoff, performance
from .mcs import McEstimate, McsConfig, estimate_mcs, mcs_theoretical_cv
from .mlmc import BudgetExceededError, MlmcConfig, MlmcResult, run_mlmc
from .mma import MmaProposal, PathScore, mma_step, run_chain
from .model import GbmParams, RngStream, evolve, sample_normal_vector
from .stats import ReplicationSummary, replicate
from .subsim import (LevelRecord, NonConvergenceError, SubSimConfig, SubSimResult,
                     ThresholdStagnationError, run_subsim)

__version__ = "0.1.0"

__all__ = [
    "BarrierContract", "BudgetExceededError", "GbmParams", "LevelRecord", "McEstimate",
    "McsConfig", "MlmcConfig", "MlmcResult", "MmaProposal", "NonConvergenceError", "PathScore",
    "ReplicationSummary", "RngStream", "SubSimConfig", "SubSimResult", "ThresholdStagnationError",
    "discount", "estimate_mcs", "evolve", "in_event", "mcs_theoretical_cv", "mma_step", "payoff",
    "performance", "replicate", "run_chain", "run_mlmc", "run_subsim", "sample_normal_vector",
]
