"""Queueing model of blockchain transaction latency over IEEE 802.11ax networks."""

__version__ = "0.1.0"

from .config import ConfigError, RunConfig
from .forks import ForkDivergenceError, ForkParams, fork_amplified_delay, fork_probability
from .queue import (ConvergenceError, ModelInconsistencyError, ModelOptions, QueueMetrics,
                    QueueParams, SaturationError, analyze)
from .sim import SimConfig, compare, run_sim

__all__ = [
    "ConfigError", "ConvergenceError", "ForkDivergenceError", "ForkParams", "ModelInconsistencyError",
    "ModelOptions", "QueueMetrics", "QueueParams", "RunConfig", "SaturationError", "SimConfig",
    "analyze", "compare", "fork_amplified_delay", "fork_probability", "run_sim",
]
