"""PPO trainer for transition-matrix policies.

The actor maps a batch of inputs to row-stochastic matrices P; the executed
transition s_t -> s_{t+1} has probability P[s_t, s_{t+1}]. The critic scores
(s_t, P). The reward mixes goal progress with deadlock and jitter penalties;
the critic target carries an extra transition-uncertainty correction.
"""
from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .featnet import DTYPE, clip_gradients
from .pfsm import ConfigurationError

log = logging.getLogger(__name__)


@dataclass
class PpoConfig:
    gamma: float = 0.98
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    l1_coef: float = 1e-3
    frob_coef: float = 0.1
    eta: float = 0.1
    episodes: int = 100
    max_steps: int = 512
    epochs: int = 4
    minibatch: int = 256
    optimizer: str = "adam"
    grad_ceiling: float = 10.0
    normalize_advantage: bool = True
    literal_signs: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if not (0.0 <= self.gamma <= 1.0 and 0.0 <= self.gae_lambda <= 1.0):
            raise ValueError("gamma and gae_lambda must lie in [0, 1]")
        if not self.clip_eps > 0:
            raise ValueError("clip_eps must be positive")
        if not (self.actor_lr > 0 and self.critic_lr > 0):
            raise ValueError("step sizes must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")


@dataclass
class RewardConfig:
    lambda_d: float = 0.5
    lambda_j: float = 0.5
    r_goal: float = 1.0
    action_costs: dict = field(default_factory=lambda: {"Launch missiles": 0.01})
    r_d_pen: float = 1.0
    r_j_pen: float = 1.0
    window: int = 8
    delta: float = 1e-3

    def __post_init__(self) -> None:
        coeffs = [self.lambda_d, self.lambda_j, self.r_goal, self.r_d_pen, self.r_j_pen,
                  *self.action_costs.values()]
        if min(coeffs) < 0:
            raise ValueError("reward coefficients must be non-negative")
        if self.window < 2:
            raise ValueError("jitter window must be >= 2")
        if not 0.0 <= self.delta <= 0.1:
            raise ValueError("deadlock threshold must lie in [0, 0.1]")


# --------------------------------------------------------------------------
# reward


def window_variance(values: Sequence[float], window: int) -> float:
    """Population variance of the last ``window`` values (0 with fewer than 2)."""
    tail = np.asarray(list(values)[-window:], dtype=float)
    if len(tail) < 2:
        return 0.0
    return float(np.mean((tail - tail.mean()) ** 2))


def deadlock_indicator(P: np.ndarray, state: int, delta: float) -> bool:
    """True when the row of ``state`` keeps at most ``delta`` mass off its self-loop."""
    row = np.asarray(P, dtype=float)[int(state)]
    return float(row.sum() - row[int(state)]) <= delta


@dataclass
class TransitionHistory:
    """Matrices and executed transitions of one agent, oldest first."""

    matrices: list = field(default_factory=list)
    executed: list = field(default_factory=list)

    def record(self, P: np.ndarray, s_t: int, s_next: int) -> None:
        P = np.asarray(P, dtype=float)
        self.matrices.append(P)
        self.executed.append(float(P[int(s_t), int(s_next)]))

    @property
    def current(self) -> np.ndarray:
        return self.matrices[-1]


@dataclass(frozen=True)
class RewardBreakdown:
    total: float
    task: float
    deadlock: float
    jitter: float


def compute_reward(s_t: int, a_t: Iterable[str], s_next: int, history: TransitionHistory,
                   cfg: RewardConfig, goal: int | None) -> RewardBreakdown:
    """Task reward minus weighted deadlock and jitter penalties for one step.

    ``history`` must already contain the current step's matrix and executed
    transition; ``a_t`` lists the action names actually carried out.
    """
    if goal is None:
        raise ConfigurationError("reward needs a goal-state label")
    if not history.matrices:
        raise ValueError("transition history is empty")
    P = history.current
    cost = sum(cfg.action_costs.get(a, 0.0) for a in a_t)
    task = cfg.r_goal * float(P[int(s_t), int(goal)]) - cost
    dead = cfg.r_d_pen * float(deadlock_indicator(P, s_next, cfg.delta))
    jit = cfg.r_j_pen * window_variance(history.executed, cfg.window)
    total = task - cfg.lambda_d * dead - cfg.lambda_j * jit
    return RewardBreakdown(total, task, dead, jit)


# --------------------------------------------------------------------------
# advantages and targets


def advantage(rewards, values, next_values, dones, gamma: float, lam: float) -> np.ndarray:
    """GAE over TD residuals; lam = 0 gives the one-step advantage.

    ``next_values[t]`` is V(s_{t+1}); ``dones[t]`` cuts both the bootstrap
    and the recursion (a trajectory boundary).
    """
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    nv = np.asarray(next_values, dtype=float)
    d = np.asarray(dones, dtype=float)
    adv = np.zeros_like(r)
    running = 0.0
    for t in range(len(r) - 1, -1, -1):
        delta = r[t] + gamma * nv[t] * (1.0 - d[t]) - v[t]
        running = delta + gamma * lam * (1.0 - d[t]) * running
        adv[t] = running
    return adv


def critic_target(r_t, v_next, delta_p, gamma: float, eta: float, done=False):
    r_t, v_next, delta_p, done = (np.asarray(x, dtype=float) for x in (r_t, v_next, delta_p, done))
    out = r_t + gamma * v_next * (1.0 - done) + eta * delta_p
    return float(out) if out.ndim == 0 else out


def clipped_surrogate(ratio: torch.Tensor, adv: torch.Tensor, eps: float) -> torch.Tensor:
    return torch.min(ratio * adv, torch.clamp(ratio, 1.0 - eps, 1.0 + eps) * adv)


def ppo_objective(new_prob: torch.Tensor, old_prob: torch.Tensor, adv: torch.Tensor,
                  P: torch.Tensor, P_prev: torch.Tensor, cfg: PpoConfig) -> tuple[torch.Tensor, dict]:
    """Clipped surrogate plus the matrix regularizers (to be maximized).

    By default the L1 and Frobenius terms act as penalties; with
    ``literal_signs`` they are added with the sign as written in the objective.
    Samples whose ratio is not finite are dropped.
    """
    ratio = new_prob / old_prob
    keep = torch.isfinite(ratio) & (old_prob > 0)
    dropped = int((~keep).sum())
    if dropped:
        log.warning("dropping %d samples with non-finite importance ratio", dropped)
    if not bool(keep.any()):
        zero = new_prob.sum() * 0.0
        return zero, {"dropped": dropped, "surrogate": 0.0, "l1": 0.0, "frob": 0.0}
    ratio, adv = ratio[keep], adv[keep]
    P, P_prev = P[keep], P_prev[keep]
    surrogate = clipped_surrogate(ratio, adv, cfg.clip_eps).mean()
    l1 = P.abs().sum(dim=(-2, -1)).mean()
    frob = ((P - P_prev) ** 2).sum(dim=(-2, -1)).mean()
    sign = 1.0 if cfg.literal_signs else -1.0
    objective = surrogate + sign * (cfg.l1_coef * l1 + cfg.frob_coef * frob)
    return objective, {"dropped": dropped, "surrogate": float(surrogate.detach()),
                       "l1": float(l1.detach()), "frob": float(frob.detach())}


# --------------------------------------------------------------------------
# critic


class Critic(nn.Module):
    """V(s_t, P): MLP over the unified feature, the current state and its P row."""

    def __init__(self, feature_width: int, n_states: int = 5, hidden: int = 128):
        super().__init__()
        self.n_states = n_states
        self.net = nn.Sequential(
            nn.Linear(feature_width + 2 * n_states, hidden), nn.Tanh(),
            nn.Linear(hidden, hidden), nn.Tanh(),
            nn.Linear(hidden, 1),
        )
        self.to(DTYPE)

    def forward(self, z: torch.Tensor, state: torch.Tensor, P: torch.Tensor) -> torch.Tensor:
        onehot = F.one_hot(state.long(), self.n_states).to(DTYPE)
        row = P[torch.arange(len(state)), state.long()]
        return self.net(torch.cat([z, onehot, row], dim=-1)).squeeze(-1)


# --------------------------------------------------------------------------
# rollout batch and trainer


@dataclass
class RolloutBuffer:
    """Flat per-step storage; trajectories are contiguous and end with done=True."""

    inputs: list = field(default_factory=list)
    states: list = field(default_factory=list)
    next_states: list = field(default_factory=list)
    rows: list = field(default_factory=list)
    matrices: list = field(default_factory=list)
    probs: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    values: list = field(default_factory=list)
    dones: list = field(default_factory=list)
    goals: list = field(default_factory=list)
    delta_p: list = field(default_factory=list)

    def add(self, inputs: dict, s_t: int, s_next: int, P: np.ndarray, reward: float, done: bool,
            goal: int, delta_p: float, value: float = float("nan")) -> None:
        P = np.asarray(P, dtype=float)
        prob = float(P[s_t, s_next])
        if not 0.0 < prob <= 1.0:
            raise ValueError(f"executed transition probability {prob} outside (0, 1]")
        self.inputs.append(inputs)
        self.states.append(int(s_t))
        self.next_states.append(int(s_next))
        self.rows.append(P[s_t].copy())
        self.matrices.append(P)
        self.probs.append(prob)
        self.rewards.append(float(reward))
        self.values.append(float(value))
        self.dones.append(bool(done))
        self.goals.append(int(goal))
        self.delta_p.append(float(delta_p))

    def extend(self, other: "RolloutBuffer") -> None:
        for name in self.__dataclass_fields__:
            getattr(self, name).extend(getattr(other, name))

    def __len__(self) -> int:
        return len(self.states)

    def mark_done(self) -> None:
        if self.dones:
            self.dones[-1] = True

    def stacked_inputs(self) -> dict:
        keys = self.inputs[0].keys()
        return {k: torch.cat([inp[k] for inp in self.inputs], dim=0) for k in keys}


@dataclass
class UpdateStats:
    actor_loss: float = 0.0
    critic_loss: float = 0.0
    surrogate: float = 0.0
    dropped: int = 0
    clipped: int = 0
    restored: int = 0
    samples: int = 0


def _index_inputs(inputs: dict, idx: torch.Tensor) -> dict:
    return {k: v[idx] for k, v in inputs.items()}


class PpoTrainer:
    """Single-writer trainer owning the actor and critic parameters."""

    def __init__(self, actor: nn.Module, critic: nn.Module, cfg: PpoConfig):
        self.actor = actor
        self.critic = critic
        self.cfg = cfg
        self.actor_lr = cfg.actor_lr
        self.critic_lr = cfg.critic_lr
        self._gen = torch.Generator().manual_seed(cfg.seed)
        self.clip_count = 0
        self._make_optimizers()

    def _make_optimizers(self) -> None:
        opt: Callable = torch.optim.Adam if self.cfg.optimizer == "adam" else torch.optim.SGD
        actor_params = [p for p in self.actor.parameters() if p.requires_grad]
        self.actor_opt = opt(actor_params, lr=self.actor_lr)
        self.critic_opt = opt(self.critic.parameters(), lr=self.critic_lr)

    def _values(self, inputs: dict, states: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        with torch.no_grad():
            out = self.actor(inputs)
            return self.critic(out.z, states, out.P), out.P

    def prepare(self, buf: RolloutBuffer) -> dict:
        """Freeze old probabilities, values, advantages and critic targets for a batch."""
        cfg = self.cfg
        inputs = buf.stacked_inputs()
        s = torch.tensor(buf.states)
        s_next = torch.tensor(buf.next_states)
        values, P_now = self._values(inputs, s)
        values = values.numpy()
        dones = np.asarray(buf.dones, dtype=float)
        # V(s_{t+1}) is the value of the following sample of the same trajectory
        next_values = np.zeros_like(values)
        next_values[:-1] = values[1:]
        next_values = np.where(dones > 0, 0.0, next_values)
        rewards = np.asarray(buf.rewards, dtype=float)
        adv = advantage(rewards, values, next_values, dones, cfg.gamma, cfg.gae_lambda)
        targets = critic_target(rewards, next_values, np.asarray(buf.delta_p), cfg.gamma, cfg.eta, dones)
        if cfg.normalize_advantage and len(adv) > 1:
            adv = (adv - adv.mean()) / (adv.std() + 1e-8)
        return {
            "inputs": inputs,
            "s": s,
            "s_next": s_next,
            "old_prob": torch.tensor(buf.probs, dtype=DTYPE),
            "P_prev": torch.as_tensor(np.stack(buf.matrices), dtype=DTYPE),
            "adv": torch.as_tensor(adv, dtype=DTYPE),
            "targets": torch.as_tensor(np.atleast_1d(targets), dtype=DTYPE),
            "values": values,
        }

    def _snapshot(self):
        return (copy.deepcopy(self.actor.state_dict()), copy.deepcopy(self.critic.state_dict()),
                copy.deepcopy(self.actor_opt.state_dict()), copy.deepcopy(self.critic_opt.state_dict()))

    def _params_finite(self) -> bool:
        return all(bool(torch.isfinite(p).all())
                   for m in (self.actor, self.critic) for p in m.parameters())

    def update(self, buf: RolloutBuffer) -> UpdateStats:
        cfg = self.cfg
        batch = self.prepare(buf)
        n = len(buf)
        stats = UpdateStats(samples=n)
        snap = self._snapshot()
        mb = n if cfg.minibatch <= 0 else min(cfg.minibatch, n)
        for _ in range(cfg.epochs):
            order = torch.randperm(n, generator=self._gen) if mb < n else torch.arange(n)
            for start in range(0, n, mb):
                idx = order[start:start + mb]
                self._step(batch, idx, stats)
        if not self._params_finite():
            actor_sd, critic_sd, aopt, copt = snap
            self.actor.load_state_dict(actor_sd)
            self.critic.load_state_dict(critic_sd)
            self.actor_lr /= 2
            self.critic_lr /= 2
            self._make_optimizers()
            stats.restored += 1
            log.warning("non-finite parameters after update; restored snapshot, step sizes halved")
        return stats

    def _step(self, batch: dict, idx: torch.Tensor, stats: UpdateStats) -> None:
        cfg = self.cfg
        inputs = _index_inputs(batch["inputs"], idx)
        s, s_next = batch["s"][idx], batch["s_next"][idx]
        out = self.actor(inputs)
        rows = torch.arange(len(idx))
        new_prob = out.P[rows, s, s_next]
        objective, info = ppo_objective(new_prob, batch["old_prob"][idx], batch["adv"][idx],
                                        out.P, batch["P_prev"][idx], cfg)
        actor_loss = -objective
        v = self.critic(out.z.detach(), s, out.P.detach())
        critic_loss = 0.5 * ((v - batch["targets"][idx]) ** 2).mean()

        self.actor_opt.zero_grad()
        self.critic_opt.zero_grad()
        actor_params = [p for p in self.actor.parameters() if p.requires_grad]
        if actor_loss.requires_grad:
            grads = torch.autograd.grad(actor_loss, actor_params, allow_unused=True)
            self._apply(actor_params, grads, stats)
        grads = torch.autograd.grad(critic_loss, list(self.critic.parameters()), allow_unused=True)
        self._apply(list(self.critic.parameters()), grads, stats)
        self.actor_opt.step()
        self.critic_opt.step()

        stats.actor_loss = float(actor_loss.detach())
        stats.critic_loss = float(critic_loss.detach())
        stats.surrogate = info["surrogate"]
        stats.dropped += info["dropped"]

    def _apply(self, params, grads, stats: UpdateStats) -> None:
        named = {str(k): (torch.zeros_like(p) if g is None else g)
                 for k, (p, g) in enumerate(zip(params, grads))}
        clipped, was = clip_gradients(named, self.cfg.grad_ceiling)
        if was:
            self.clip_count += 1
            stats.clipped += 1
        for k, p in enumerate(params):
            p.grad = clipped[str(k)].detach().clone()
