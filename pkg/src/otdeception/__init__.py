"""Adaptive cyber deception for OT networks: rerouting agents, DNP3 honeypots and a feeder model."""

from .env import DeceptionEnv, EnvConfig, Mode, Outcome, RewardBreakdown, coupled_reward
from .errors import ConfigError, DecodeError, DeceptionError, EncodeError, ScoringError, TrainingError
from .harness import PRESETS, ExperimentSpec, run_experiment, run_pdec_trace
from .learners import Hyper, PolicyParams, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "DeceptionEnv",
    "EnvConfig",
    "Mode",
    "Outcome",
    "RewardBreakdown",
    "coupled_reward",
    "ConfigError",
    "DecodeError",
    "DeceptionError",
    "EncodeError",
    "ScoringError",
    "TrainingError",
    "PRESETS",
    "ExperimentSpec",
    "run_experiment",
    "run_pdec_trace",
    "Hyper",
    "PolicyParams",
    "evaluate",
    "train",
]
