"""Simulation and analysis of differential interactive games."""

from .engine import exclude_derivative, resolve_controls, rollout, simulate, step
from .epsilon import recover_epsilon
from .errors import (ConfigError, IGameError, InsufficientDataError, NumericError,
                     SimulationError)
from .invariants import QuantityCandidate, scan_omens
from .model import build_associated_game, load_game, load_game_file, validate
from .oracle import LoopConfig, run_prediction_loop, strategic_analysis
from .trajectory import Trajectory

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "IGameError", "InsufficientDataError", "LoopConfig", "NumericError",
    "QuantityCandidate", "SimulationError", "Trajectory", "build_associated_game",
    "exclude_derivative", "load_game", "load_game_file", "recover_epsilon",
    "resolve_controls", "rollout", "run_prediction_loop", "scan_omens", "simulate", "step",
    "strategic_analysis", "validate",
]
