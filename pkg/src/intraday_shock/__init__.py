"""Common-shock jump model for intraday electricity prices.

Simulation of all hourly products of a trading session under a three
parameter jump model with shared shocks, moment-based calibration from
transaction ticks, and battery valuation by regression dynamic programming.
"""

__version__ = "0.1.0"

from .model import (InitialPrices, JumpLaw, MaturityGrid, ModelParams,
                    common_jump_probability, correlation_proxy,
                    expected_covariation, hourly_grid, intensity,
                    model_correlation, volatility_proxy)
from .simulation import (EventPath, GridPath, SimConfig, sample_onto_grid,
                         simulate_batch, simulate_decomposition,
                         simulate_diffusion, simulate_price_matrix,
                         simulate_thinning)
from .estimation import (CommonShockEstimator, EstimationWindow, FittedParams,
                         TickDataset, clean, estimate, fit_jump_law,
                         make_synthetic_dataset, read_ticks_csv,
                         rolling_estimate)
from .battery import (BatterySpec, Policy, backtest, backtest_campaign,
                      optimize, spot_strategy)

__all__ = [
    "InitialPrices", "JumpLaw", "MaturityGrid", "ModelParams",
    "common_jump_probability", "correlation_proxy", "expected_covariation",
    "hourly_grid", "intensity", "model_correlation", "volatility_proxy",
    "EventPath", "GridPath", "SimConfig", "sample_onto_grid",
    "simulate_batch", "simulate_decomposition", "simulate_diffusion",
    "simulate_price_matrix", "simulate_thinning",
    "CommonShockEstimator", "EstimationWindow", "FittedParams", "TickDataset",
    "clean", "estimate", "fit_jump_law", "make_synthetic_dataset",
    "read_ticks_csv", "rolling_estimate",
    "BatterySpec", "Policy", "backtest", "backtest_campaign", "optimize",
    "spot_strategy",
]
