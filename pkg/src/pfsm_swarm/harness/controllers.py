"""Team controllers: how each policy picks behavioral states every tick."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import torch

from ..arena import AgentState, FireEvent, Team, World
from ..featnet import (CompoundNet, ContextTableNet, StreamState, context_index,
                       frames_to_inputs, preprocess)
from ..pfsm import (IfElseDecision, Observation, StateId, fsm_baseline_policy,
                    if_else_baseline_policy, next_state)
from ..ppo import RolloutBuffer, TransitionHistory, compute_reward, window_variance


@dataclass(frozen=True)
class Decision:
    state: StateId
    rule: IfElseDecision | None = None


@dataclass
class TickContext:
    """What a controller may look at when deciding."""

    world: World
    observations: Mapping[int, Observation]
    goals: Mapping[int, StateId]
    history: list


class Controller:
    """Base class; subclasses override :meth:`decide`."""

    name = "base"
    stationary = False

    def reset(self, world: World, team: Team) -> None:
        self.team = team

    def describe(self) -> dict:
        """Enough to rebuild the controller when replaying a log."""
        return {"policy": self.name}

    def decide(self, ctx: TickContext, agents: list[AgentState]) -> dict[int, Decision]:
        raise NotImplementedError

    def after_tick(self, world: World, executed: Mapping[int, list[str]],
                   events: list[FireEvent]) -> None:
        pass

    def finish(self, world: World) -> None:
        pass


class FsmController(Controller):
    name = "FSM"

    def __init__(self, mask: np.ndarray | None = None):
        self.mask = mask

    def decide(self, ctx, agents):
        return {a.id: Decision(fsm_baseline_policy(ctx.observations[a.id], self.mask)) for a in agents}


class IfElseController(Controller):
    name = "IfElse"

    def decide(self, ctx, agents):
        out = {}
        for a in agents:
            rule = if_else_baseline_policy(ctx.observations[a.id])
            out[a.id] = Decision(rule.behavior, rule)
        return out


class ScriptedController(Controller):
    """Holds one state forever; optionally never moves."""

    def __init__(self, state: StateId = StateId.SEARCH, stationary: bool = True):
        self.state = StateId(state)
        self.stationary = stationary
        self.name = "Scripted"

    def describe(self):
        return {"policy": self.name, "state": int(self.state), "stationary": self.stationary}

    def decide(self, ctx, agents):
        return {a.id: Decision(self.state) for a in agents}


@dataclass
class _Pending:
    inputs: dict
    s_t: int
    s_next: int
    P: np.ndarray
    goal: int


@dataclass
class EpisodeRecord:
    """Rollout and reward bookkeeping of a learning controller for one episode."""

    buffer: RolloutBuffer = field(default_factory=RolloutBuffer)
    rewards: list = field(default_factory=list)


class PfsmController(Controller):
    """Transition matrices from a network; next state is the argmax of the current row.

    With ``record=True`` every decision is stored with its reward so the
    episode can be fed to the PPO trainer afterwards.
    """

    def __init__(self, model: CompoundNet | ContextTableNet, cfg, record: bool = False,
                 name: str | None = None):
        self.model = model
        self.cfg = cfg
        self.record = record
        self.kind = "rl" if isinstance(model, ContextTableNet) else "drl"
        self.name = name or ("PFSM-RL" if self.kind == "rl" else "PFSM-DRL")

    def reset(self, world, team):
        super().reset(world, team)
        self.streams: dict[int, StreamState] = {}
        self.histories: dict[int, TransitionHistory] = {}
        self.trajectories: dict[int, RolloutBuffer] = {}
        self.pending: dict[int, _Pending] = {}
        self.episode = EpisodeRecord()

    def _inputs(self, ctx: TickContext, agents: list[AgentState]) -> dict:
        if self.kind == "rl":
            ctxs = []
            for a in agents:
                obs = ctx.observations[a.id]
                ctxs.append(context_index(bool(obs.enemies), obs.help_signal, obs.armed))
            return {"context": torch.tensor(ctxs, dtype=torch.long)}
        fcfg = self.cfg.features
        frames = [preprocess(ctx.history, a.id, [e.id for e in ctx.observations[a.id].enemies], fcfg)
                  for a in agents]
        states = [self.streams.get(a.id) or self.model.initial_state(1) for a in agents]
        stacked = StreamState(*(torch.cat([getattr(s, f) for s in states])
                                for f in ("h_agent", "c_agent", "h_enemy", "c_enemy")))
        return frames_to_inputs(frames, stacked)

    def decide(self, ctx, agents):
        if not agents:
            return {}
        inputs = self._inputs(ctx, agents)
        with torch.no_grad():
            out = self.model(inputs)
        P = out.P.numpy()
        decisions = {}
        for k, a in enumerate(agents):
            s_t = int(a.behavior)
            s_next = int(next_state(s_t, P[k]))
            if self.kind == "drl":
                self.streams[a.id] = out.state.select(slice(k, k + 1))
            hist = self.histories.setdefault(a.id, TransitionHistory())
            hist.record(P[k], s_t, s_next)
            if self.record:
                one = {name: t[k:k + 1] for name, t in inputs.items()}
                self.pending[a.id] = _Pending(one, s_t, s_next, P[k], int(ctx.goals[a.id]))
            decisions[a.id] = Decision(StateId(s_next))
        return decisions

    def after_tick(self, world, executed, events):
        if not self.record:
            return
        rcfg = self.cfg.reward
        for aid, p in self.pending.items():
            hist = self.histories[aid]
            r = compute_reward(p.s_t, executed.get(aid, []), p.s_next, hist, rcfg, p.goal)
            buf = self.trajectories.setdefault(aid, RolloutBuffer())
            buf.add(p.inputs, p.s_t, p.s_next, p.P, r.total, not world.agent(aid).alive,
                    p.goal, window_variance(hist.executed, rcfg.window))
            self.episode.rewards.append(r.total)
        self.pending = {}

    def finish(self, world):
        if not self.record:
            return
        for aid in sorted(self.trajectories):
            traj = self.trajectories[aid]
            traj.mark_done()
            self.episode.buffer.extend(traj)


class OracleController(Controller):
    """Follows the goal-state oracle directly; an upper reference for learned policies."""

    name = "Oracle"

    def decide(self, ctx, agents):
        return {a.id: Decision(ctx.goals[a.id]) for a in agents}
