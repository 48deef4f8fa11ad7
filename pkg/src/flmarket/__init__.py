"""Auction-based federated learning market simulator."""

from .config import SimConfig, load_config
from .core import ConfigError, MarketError, RoundLedger, performance_gain, settle_round
from .sim import run_experiment

__all__ = [
    "SimConfig",
    "load_config",
    "ConfigError",
    "MarketError",
    "RoundLedger",
    "performance_gain",
    "settle_round",
    "run_experiment",
]
__version__ = "0.1.0"
