"""Blind neural equalization of simulated PAM4 IM/DD links."""
from .estimator import BlindEqualizer
from .experiment import ConfigError, ExperimentConfig
from .networks import EQUALIZERS, ESTIMATORS, Network, NetworkSpec, make_equalizer, make_estimator
from .training import TrainingConfig, train

__version__ = "0.1.0"

__all__ = [
    "BlindEqualizer", "ConfigError", "ExperimentConfig", "EQUALIZERS", "ESTIMATORS",
    "Network", "NetworkSpec", "make_equalizer", "make_estimator", "TrainingConfig", "train",
]
