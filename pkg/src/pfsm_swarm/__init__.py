"""Probabilistic finite-state behavior engine for 2D swarm confrontation."""
from .config import ExperimentConfig, load_config

__all__ = ["ExperimentConfig", "load_config"]
__version__ = "0.1.0"
