"""Episode loop, metrics, training and experiment orchestration."""
from .ablation import AblationResult, ablation
from .controllers import (Controller, Decision, FsmController, IfElseController,
                          OracleController, PfsmController, ScriptedController)
from .episode import EpisodeAborted, EpisodeLog, run_episode
from .metrics import MetricsReport, deadlock_count, jitter_count, state_distribution
from .replay import ReplayResult, replay
from .scenario import ScenarioReport, scripted_encounter
from .training import evaluate, load_policy, save_policy, train

__all__ = [
    "AblationResult", "ablation", "Controller", "Decision", "FsmController", "IfElseController",
    "OracleController", "PfsmController", "ScriptedController", "EpisodeAborted", "EpisodeLog",
    "run_episode", "MetricsReport", "deadlock_count", "jitter_count", "state_distribution",
    "ReplayResult", "replay", "ScenarioReport", "scripted_encounter", "evaluate", "load_policy",
    "save_policy", "train",
]
