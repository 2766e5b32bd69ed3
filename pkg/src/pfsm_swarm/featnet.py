"""Compound three-stream network producing the PFSM transition matrix.

Each stream (self, teammates, enemies) embeds a short window of per-tick
frames with a temporal convolution, max-pooling and a dense layer. The self
and enemy streams carry an LSTM cell across ticks; teammate embeddings are
pooled with distance-based attention. The three stream outputs are
concatenated and mapped to 5x5 logits, masked and row-normalized.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .pfsm import N_STATES

DTYPE = torch.float64
SIGMA_FLOOR = 1e-6

# per-entity channels: vx, vy, px, py, one-hot state (5), time, distance,
# cos(bearing from focal heading), cos(bearing from entity heading), missiles
N_CHANNELS = 14


class NonFiniteError(FloatingPointError):
    """A forward stage produced NaN or inf."""


@dataclass(frozen=True)
class FeatureConfig:
    window: int = 8
    max_teammates: int = 10
    max_enemies: int = 10
    conv_channels: int = 32
    kernel: int = 3
    pool: int = 2
    embed_width: int = 64
    stream_width: int = 64
    hidden: int = 512
    tau: float = 1.0
    learn_tau: bool = False
    # initial logit bonus on self-transitions, so an untrained PFSM holds its state
    self_bias: float = 0.0
    r_d: float = 2.0
    max_missiles: int = 2
    max_ticks: int = 512

    def __post_init__(self) -> None:
        if self.window < self.kernel:
            raise ValueError("window must be at least the kernel size")
        if not self.tau > 0:
            raise ValueError("tau must be positive")


# --------------------------------------------------------------------------
# preprocessing


@dataclass
class Snapshot:
    """Raw state of every agent at one tick."""

    tick: int
    ids: np.ndarray
    red: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    headings: np.ndarray
    behaviors: np.ndarray
    missiles: np.ndarray
    alive: np.ndarray

    def index(self, agent_id: int) -> int:
        return int(np.flatnonzero(self.ids == agent_id)[0])


def standardize(values: np.ndarray, weights: np.ndarray | None = None,
                floor: float = SIGMA_FLOOR) -> np.ndarray:
    """Per-column z-score across rows (population std, floored)."""
    values = np.asarray(values, dtype=float)
    rows = values if weights is None else values[np.asarray(weights, dtype=bool)]
    if len(rows) == 0:
        return np.zeros_like(values)
    mean = rows.mean(axis=0)
    std = np.maximum(rows.std(axis=0), floor)
    centered = values - mean
    # a constant column centres to exactly zero, not to rounding noise over the floor
    const = np.ptp(rows, axis=0) == 0
    centered = np.where(const & (values == rows[0]), 0.0, centered)
    return centered / std


def one_hot(state: int, n: int = N_STATES) -> np.ndarray:
    v = np.zeros(n)
    v[int(state)] = 1.0
    return v


@dataclass
class FeatureFrame:
    """Preprocessed input windows for one focal agent at one tick."""

    self_window: np.ndarray
    mates: np.ndarray
    mate_valid: np.ndarray
    mate_dist: np.ndarray
    enemies: np.ndarray
    enemy_valid: np.ndarray
    enemy_dist: np.ndarray
    t: int


def _standardized(snap: Snapshot) -> tuple[np.ndarray, np.ndarray]:
    alive = snap.alive.astype(bool)
    return standardize(snap.velocities, alive), standardize(snap.positions, alive)


def _entity_frame(snap: Snapshot, vel, pos, k: int, focal: int, relative: bool,
                  cfg: FeatureConfig) -> np.ndarray:
    out = np.zeros(N_CHANNELS)
    out[0:2] = vel[k]
    out[2:4] = pos[k] - pos[focal] if relative else pos[k]
    out[4 + int(snap.behaviors[k])] = 1.0
    out[9] = snap.tick / cfg.max_ticks
    if relative:
        d_vec = snap.positions[k] - snap.positions[focal]
        d = float(np.hypot(*d_vec))
        out[10] = min(d / cfg.r_d, 5.0)
        if d > 0:
            hf, he = snap.headings[focal], snap.headings[k]
            out[11] = (d_vec[0] * math.cos(hf) + d_vec[1] * math.sin(hf)) / d
            out[12] = -(d_vec[0] * math.cos(he) + d_vec[1] * math.sin(he)) / d
    out[13] = snap.missiles[k] / max(cfg.max_missiles, 1)
    return out


def preprocess(history: Sequence[Snapshot], focal_id: int, enemy_ids: Sequence[int],
               cfg: FeatureConfig) -> FeatureFrame:
    """Build the self / teammate / enemy windows for ``focal_id``.

    ``history`` holds the most recent snapshots, oldest first; short histories
    are padded by repeating the oldest snapshot. Teammates are the focal
    agent's living teammates at the last tick; enemies are exactly
    ``enemy_ids`` (the currently perceived ones). Positions of other agents are
    expressed relative to the focal agent.
    """
    if not history:
        raise ValueError("need at least one snapshot")
    snaps = list(history)[-cfg.window:]
    snaps = [snaps[0]] * (cfg.window - len(snaps)) + snaps
    last = snaps[-1]
    if not last.alive.any():
        raise ValueError("need at least one living agent")
    f_last = last.index(focal_id)
    team_red = bool(last.red[f_last])
    mate_ids = [int(i) for k, i in enumerate(last.ids)
                if last.alive[k] and bool(last.red[k]) == team_red and int(i) != focal_id]
    mate_ids = mate_ids[: cfg.max_teammates]
    enemy_ids = list(enemy_ids)[: cfg.max_enemies]

    W = cfg.window
    self_w = np.zeros((W, N_CHANNELS))
    mates = np.zeros((cfg.max_teammates, W, N_CHANNELS))
    enemies = np.zeros((cfg.max_enemies, W, N_CHANNELS))
    for t, snap in enumerate(snaps):
        vel, pos = _standardized(snap)
        f = snap.index(focal_id)
        self_w[t] = _entity_frame(snap, vel, pos, f, f, False, cfg)
        for m, mid in enumerate(mate_ids):
            mates[m, t] = _entity_frame(snap, vel, pos, snap.index(mid), f, True, cfg)
        for e, eid in enumerate(enemy_ids):
            enemies[e, t] = _entity_frame(snap, vel, pos, snap.index(eid), f, True, cfg)

    def dists(ids):
        out = np.zeros(len(ids))
        for n, i in enumerate(ids):
            out[n] = float(np.hypot(*(last.positions[last.index(i)] - last.positions[f_last])))
        return out

    mate_valid = np.zeros(cfg.max_teammates, dtype=bool)
    mate_valid[: len(mate_ids)] = True
    enemy_valid = np.zeros(cfg.max_enemies, dtype=bool)
    enemy_valid[: len(enemy_ids)] = True
    mate_dist = np.zeros(cfg.max_teammates)
    mate_dist[: len(mate_ids)] = dists(mate_ids)
    enemy_dist = np.zeros(cfg.max_enemies)
    enemy_dist[: len(enemy_ids)] = dists(enemy_ids)
    return FeatureFrame(self_w, mates, mate_valid, mate_dist, enemies, enemy_valid, enemy_dist, last.tick)


# --------------------------------------------------------------------------
# network


def attention_weights(distances, tau: float, valid=None) -> torch.Tensor:
    """Softmax of -distance / tau over the last axis, restricted to valid entries.

    Rows with no valid entry come back as all zeros.
    """
    d = torch.as_tensor(distances, dtype=DTYPE)
    tau_t = torch.as_tensor(tau, dtype=DTYPE)
    scores = -d / tau_t
    if valid is None:
        return torch.softmax(scores, dim=-1)
    valid = torch.as_tensor(valid, dtype=torch.bool)
    scores = scores.masked_fill(~valid, -math.inf)
    any_valid = valid.any(dim=-1, keepdim=True)
    scores = torch.where(any_valid, scores, torch.zeros_like(scores))
    return torch.softmax(scores, dim=-1) * any_valid


def teammate_aggregate(embeddings: torch.Tensor, alpha: torch.Tensor) -> torch.Tensor:
    """Attention-weighted sum over the teammate axis: (..., M, D), (..., M) -> (..., D)."""
    return torch.einsum("...m,...md->...d", alpha, embeddings)


def masked_row_softmax(logits: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    if not bool(mask.any(dim=-1).all()):
        raise ValueError("every row needs at least one permitted edge")
    return torch.softmax(logits.masked_fill(~mask, -math.inf), dim=-1)


class WindowEncoder(nn.Module):
    """Temporal conv -> tanh -> max-pool -> dense -> tanh over a (W, C) window."""

    def __init__(self, cfg: FeatureConfig):
        super().__init__()
        self.conv = nn.Conv1d(N_CHANNELS, cfg.conv_channels, cfg.kernel)
        pooled = (cfg.window - cfg.kernel + 1) // cfg.pool
        self.pool = cfg.pool
        self.fc = nn.Linear(cfg.conv_channels * pooled, cfg.embed_width)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        lead = x.shape[:-2]
        x = x.reshape(-1, *x.shape[-2:]).transpose(1, 2)
        h = F.max_pool1d(torch.tanh(self.conv(x)), self.pool)
        e = torch.tanh(self.fc(h.flatten(1)))
        return e.reshape(*lead, -1)


@dataclass
class StreamState:
    """Recurrent state of the self and enemy streams, (B, embed_width) each."""

    h_agent: torch.Tensor
    c_agent: torch.Tensor
    h_enemy: torch.Tensor
    c_enemy: torch.Tensor

    @classmethod
    def zeros(cls, batch: int, width: int) -> "StreamState":
        z = lambda: torch.zeros(batch, width, dtype=DTYPE)  # noqa: E731
        return cls(z(), z(), z(), z())

    def select(self, idx) -> "StreamState":
        return StreamState(self.h_agent[idx], self.c_agent[idx], self.h_enemy[idx], self.c_enemy[idx])


@dataclass
class NetOutput:
    P: torch.Tensor
    logits: torch.Tensor
    z: torch.Tensor
    state: StreamState
    stages: dict = field(default_factory=dict)


def _check_finite(name: str, t: torch.Tensor) -> None:
    if not bool(torch.isfinite(t).all()):
        raise NonFiniteError(f"non-finite values at stage '{name}' (shape {tuple(t.shape)})")


class CompoundNet(nn.Module):
    def __init__(self, cfg: FeatureConfig = FeatureConfig(), mask: np.ndarray | None = None):
        super().__init__()
        self.cfg = cfg
        E = cfg.embed_width
        self.agent_embed = WindowEncoder(cfg)
        self.mate_embed = WindowEncoder(cfg)
        self.enemy_embed = WindowEncoder(cfg)
        self.agent_lstm = nn.LSTMCell(E, E)
        self.enemy_lstm = nn.LSTMCell(E, E)
        self.mate_mix = nn.Linear(E, E)
        self.agent_out = nn.Linear(E, cfg.stream_width)
        self.mate_out = nn.Linear(E, cfg.stream_width)
        self.enemy_out = nn.Linear(E, cfg.stream_width)
        self.trunk = nn.Linear(3 * cfg.stream_width, cfg.hidden)
        self.head = nn.Linear(cfg.hidden, N_STATES * N_STATES)
        self.log_tau = nn.Parameter(torch.tensor(math.log(cfg.tau)), requires_grad=cfg.learn_tau)
        m = np.ones((N_STATES, N_STATES), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        if not m.any(axis=1).all():
            raise ValueError("topology mask leaves a state without outgoing edges")
        self.register_buffer("mask", torch.as_tensor(m))
        self.to(DTYPE)
        with torch.no_grad():
            self.head.bias.view(N_STATES, N_STATES).diagonal().add_(cfg.self_bias)

    @property
    def tau(self) -> torch.Tensor:
        return self.log_tau.exp()

    def initial_state(self, batch: int) -> StreamState:
        return StreamState.zeros(batch, self.cfg.embed_width)

    # the three streams, usable on their own -----------------------------
    def agent_stream(self, window: torch.Tensor, h: torch.Tensor, c: torch.Tensor):
        e = self.agent_embed(window)
        h2, c2 = self.agent_lstm(e, (h, c))
        r = torch.tanh(self.agent_out(h2))
        return r, (h2, c2), e

    def mate_stream(self, windows: torch.Tensor, valid: torch.Tensor, dist: torch.Tensor):
        emb = self.mate_embed(windows)
        alpha = attention_weights(dist, self.tau, valid)
        e = teammate_aggregate(emb, alpha)
        o = torch.tanh(self.mate_mix(e))
        r = torch.tanh(self.mate_out(o))
        # no living teammate -> zero feature
        r = r * valid.any(dim=-1, keepdim=True).to(r.dtype)
        return r, alpha, e

    def enemy_stream(self, windows: torch.Tensor, valid: torch.Tensor, dist: torch.Tensor,
                     h: torch.Tensor, c: torch.Tensor):
        emb = self.enemy_embed(windows)
        alpha = attention_weights(dist, self.tau, valid)
        e = teammate_aggregate(emb, alpha)
        h2, c2 = self.enemy_lstm(e, (h, c))
        r = torch.tanh(self.enemy_out(h2))
        return r, (h2, c2), e

    def fuse_and_head(self, r_a: torch.Tensor, r_t: torch.Tensor, r_e: torch.Tensor):
        z = torch.cat([r_a, r_t, r_e], dim=-1)
        logits = self.head(torch.tanh(self.trunk(z))).reshape(*z.shape[:-1], N_STATES, N_STATES)
        return masked_row_softmax(logits, self.mask), logits, z

    def forward(self, inputs: dict) -> NetOutput:
        st = StreamState(inputs["h_agent"], inputs["c_agent"], inputs["h_enemy"], inputs["c_enemy"])
        r_a, (ha, ca), e_a = self.agent_stream(inputs["self_window"], st.h_agent, st.c_agent)
        r_t, alpha, e_t = self.mate_stream(inputs["mates"], inputs["mate_valid"], inputs["mate_dist"])
        r_e, (he, ce), e_e = self.enemy_stream(inputs["enemies"], inputs["enemy_valid"],
                                               inputs["enemy_dist"], st.h_enemy, st.c_enemy)
        P, logits, z = self.fuse_and_head(r_a, r_t, r_e)
        for name, t in (("agent", r_a), ("teammate", r_t), ("enemy", r_e), ("logits", logits), ("P", P)):
            _check_finite(name, t)
        return NetOutput(P, logits, z, StreamState(ha, ca, he, ce),
                         {"e_agent": e_a, "e_mates": e_t, "e_enemy": e_e, "alpha": alpha})


def frames_to_inputs(frames: Sequence[FeatureFrame], state: StreamState) -> dict:
    def stack(name, dtype=DTYPE):
        return torch.as_tensor(np.stack([getattr(f, name) for f in frames]), dtype=dtype)

    return {
        "self_window": stack("self_window"),
        "mates": stack("mates"),
        "mate_valid": stack("mate_valid", torch.bool),
        "mate_dist": stack("mate_dist"),
        "enemies": stack("enemies"),
        "enemy_valid": stack("enemy_valid", torch.bool),
        "enemy_dist": stack("enemy_dist"),
        "h_agent": state.h_agent,
        "c_agent": state.c_agent,
        "h_enemy": state.h_enemy,
        "c_enemy": state.c_enemy,
    }


def stream_forward(net: CompoundNet, frames: Sequence[FeatureFrame],
                   state: StreamState | None = None) -> tuple[torch.Tensor, StreamState]:
    """Run the full network over consecutive frames of one agent, carrying recurrence.

    Returns the unified features for each step, shape (T, 3 * stream_width).
    """
    state = state or net.initial_state(1)
    zs = []
    for frame in frames:
        out = net(frames_to_inputs([frame], state))
        state = out.state
        zs.append(out.z[0])
    return torch.stack(zs), state


# --------------------------------------------------------------------------
# context-table model for the shallow PFSM-RL variant


N_CONTEXTS = 8


def context_index(enemy_perceived: bool, help_signal: bool, armed: bool) -> int:
    return int(enemy_perceived) * 4 + int(help_signal) * 2 + int(armed)


class ContextTableNet(nn.Module):
    """Transition logits looked up from a small table of coarse situations."""

    def __init__(self, mask: np.ndarray | None = None, n_contexts: int = N_CONTEXTS,
                 n_states: int = N_STATES, self_bias: float = 0.0):
        super().__init__()
        self.n_contexts = n_contexts
        init = torch.eye(n_states, dtype=DTYPE).expand(n_contexts, n_states, n_states) * self_bias
        self.table = nn.Parameter(init.clone())
        m = np.ones((n_states, n_states), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        self.register_buffer("mask", torch.as_tensor(m))

    def initial_state(self, batch: int) -> StreamState:
        return StreamState.zeros(batch, 1)

    def forward(self, inputs: dict) -> NetOutput:
        ctx = inputs["context"].long()
        logits = self.table[ctx]
        P = masked_row_softmax(logits, self.mask)
        z = F.one_hot(ctx, self.n_contexts).to(DTYPE)
        empty = StreamState.zeros(len(ctx), 1)
        return NetOutput(P, logits, z, empty)


# --------------------------------------------------------------------------
# gradients


def backward(loss: torch.Tensor, module: nn.Module) -> dict[str, torch.Tensor]:
    """Reverse-mode gradients of a scalar loss for every trainable parameter.

    Parameters the loss does not depend on get an explicit zero gradient.
    """
    named = [(n, p) for n, p in module.named_parameters() if p.requires_grad]
    grads = torch.autograd.grad(loss, [p for _, p in named], allow_unused=True, retain_graph=True)
    return {n: (torch.zeros_like(p) if g is None else g) for (n, p), g in zip(named, grads)}


def clip_gradients(grads: dict[str, torch.Tensor], ceiling: float) -> tuple[dict[str, torch.Tensor], bool]:
    """Rescale all gradients jointly so their global norm is at most ``ceiling``.

    Non-finite gradients pass through untouched; the trainer's post-update
    check deals with them.
    """
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if not math.isfinite(total) or total <= ceiling:
        return grads, False
    scale = ceiling / total
    return {n: g * scale for n, g in grads.items()}, True
