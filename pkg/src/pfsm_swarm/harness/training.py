"""Training and evaluation of red policies against a fixed blue team."""
from __future__ import annotations

import dataclasses
import hashlib
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..checkpoint import load_arrays, save_module
from ..config import ExperimentConfig, from_dict
from ..featnet import CompoundNet, ContextTableNet
from ..ppo import Critic, PpoTrainer, UpdateStats
from .controllers import (Controller, FsmController, IfElseController, OracleController,
                          PfsmController, ScriptedController)
from .episode import EpisodeAborted, run_episode
from .metrics import MetricsReport, WinTally, deadlock_count, jitter_count, summarize_game

log = logging.getLogger(__name__)

LEARNED = ("PFSM-DRL", "PFSM-RL")


def make_model(cfg: ExperimentConfig, policy: str) -> torch.nn.Module:
    mask = cfg.pfsm.topology_mask
    if policy == "PFSM-DRL":
        return CompoundNet(cfg.features, mask)
    if policy == "PFSM-RL":
        return ContextTableNet(mask, self_bias=cfg.features.self_bias)
    raise ValueError(f"{policy!r} has no trainable model")


def make_critic(cfg: ExperimentConfig, model: torch.nn.Module) -> Critic:
    if isinstance(model, ContextTableNet):
        return Critic(model.n_contexts)
    return Critic(3 * cfg.features.stream_width)


def make_controller(policy: str, cfg: ExperimentConfig, model: torch.nn.Module | None = None,
                    record: bool = False) -> Controller:
    if policy in LEARNED:
        if model is None:
            raise ValueError(f"{policy} needs a model")
        return PfsmController(model, cfg, record=record, name=policy)
    if policy == "FSM":
        return FsmController(cfg.pfsm.topology_mask)
    if policy == "IfElse":
        return IfElseController()
    if policy == "Oracle":
        return OracleController()
    raise ValueError(f"unknown policy {policy!r}")


# seed streams: training episodes and evaluation games never share a seed
def train_seed(run_seed: int, episode: int) -> int:
    return 1_000_000 + 10_000 * run_seed + episode


def eval_seed(run_seed: int, game: int) -> int:
    return 10_000 * run_seed + game


# --------------------------------------------------------------------------
# checkpoints


def save_policy(path: str | Path, policy: str, model: torch.nn.Module, cfg: ExperimentConfig,
                team_size: int, seed: int) -> dict:
    meta = {"policy": policy, "team_size": team_size, "seed": seed, "config": cfg.to_dict()}
    save_module(path, model, meta)
    return checkpoint_ref(path)


def checkpoint_ref(path: str | Path) -> dict:
    """How an episode log names the checkpoint it was played with."""
    data = Path(path).read_bytes()
    return {"path": str(path), "sha256": hashlib.sha256(data).hexdigest()}


def load_policy(path: str | Path) -> tuple[ExperimentConfig, str, torch.nn.Module, dict]:
    arrays, meta = load_arrays(path)
    cfg = from_dict(meta["config"])
    model = make_model(cfg, meta["policy"])
    model.load_state_dict({k: torch.from_numpy(v) for k, v in arrays.items()})
    return cfg, meta["policy"], model, meta


# --------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    policy: str
    team_size: int
    seed: int
    model: torch.nn.Module
    critic: Critic
    report: MetricsReport
    updates: list[UpdateStats] = field(default_factory=list)
    aborted: int = 0


def train(cfg: ExperimentConfig, policy: str, team_size: int, seed: int,
          episodes: int | None = None, progress=None) -> TrainResult:
    """PPO on one red policy against the configured blue team, one update per episode."""
    episodes = cfg.ppo.episodes if episodes is None else episodes
    torch.manual_seed(seed)
    model = make_model(cfg, policy)
    critic = make_critic(cfg, model)
    trainer = PpoTrainer(model, critic, dataclasses.replace(cfg.ppo, seed=seed))
    report = MetricsReport(policy, team_size)
    result = TrainResult(policy, team_size, seed, model, critic, report)
    tally = WinTally()
    for ep in range(episodes):
        red = make_controller(policy, cfg, model, record=True)
        blue = make_controller(cfg.harness.blue_policy, cfg)
        try:
            ep_log = run_episode(cfg, red, blue, team_size, team_size, train_seed(seed, ep))
        except EpisodeAborted as exc:
            log.warning("training episode %d skipped: %s", ep, exc)
            result.aborted += 1
            continue
        outcome = ep_log.result["outcome"]
        tally.add(outcome)
        rewards = np.asarray(red.episode.rewards, dtype=float)
        report.reward_mean.append(float(rewards.mean()) if len(rewards) else 0.0)
        report.reward_std.append(float(rewards.std()) if len(rewards) else 0.0)
        report.win_curve.append(tally.win_rate)
        report.win_flag.append(1.0 if outcome == "RedWin" else 0.0)
        report.jitter.append(float(jitter_count(ep_log, cfg.harness.jitter_window, "red")))
        report.deadlock.append(float(deadlock_count(ep_log, cfg.harness.deadlock_dwell, "red")))
        stats = trainer.update(red.episode.buffer) if len(red.episode.buffer) else UpdateStats()
        result.updates.append(stats)
        report.actor_loss.append(stats.actor_loss)
        report.critic_loss.append(stats.critic_loss)
        if progress:
            progress(ep, ep_log, report)
    return result


# --------------------------------------------------------------------------
# evaluation


@dataclass
class _Job:
    cfg: ExperimentConfig
    policy: str
    team_size: int
    seed: int
    model: torch.nn.Module | None
    checkpoint: dict | None


def _play(job: _Job):
    torch.set_num_threads(1)
    cfg = job.cfg
    red = make_controller(job.policy, cfg, job.model)
    blue = make_controller(cfg.harness.blue_policy, cfg)
    ep_log = run_episode(cfg, red, blue, job.team_size, job.team_size, job.seed, job.checkpoint)
    return summarize_game(ep_log, cfg.harness.jitter_window, cfg.harness.deadlock_dwell), ep_log


def play_games(cfg: ExperimentConfig, policy: str, team_size: int, seeds: list[int],
               model: torch.nn.Module | None = None, checkpoint: dict | None = None,
               keep_logs: bool = False):
    """Evaluation games in seed order; runs in worker processes when configured."""
    jobs = [_Job(cfg, policy, team_size, s, model, checkpoint) for s in seeds]
    workers = cfg.harness.workers or os.cpu_count() or 1
    if workers == 1 or len(jobs) == 1:
        results = [_play(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_play, jobs))
    games = [g for g, _ in results]
    return (games, [lg for _, lg in results]) if keep_logs else games


def evaluate(cfg: ExperimentConfig, policy: str, team_size: int, run_seed: int = 0,
             games: int | None = None, model: torch.nn.Module | None = None,
             checkpoint: dict | None = None) -> MetricsReport:
    games = cfg.harness.eval_games if games is None else games
    report = MetricsReport(policy, team_size)
    seeds = [eval_seed(run_seed, k) for k in range(games)]
    report.games = play_games(cfg, policy, team_size, seeds, model, checkpoint)
    return report


def controller_from_description(desc: dict, cfg: ExperimentConfig,
                                model: torch.nn.Module | None = None) -> Controller:
    if desc["policy"] == "Scripted":
        return ScriptedController(desc["state"], desc["stationary"])
    return make_controller(desc["policy"], cfg, model)
