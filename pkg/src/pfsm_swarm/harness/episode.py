"""The tick loop and its line-delimited log.

One tick is: snapshot -> observe -> decide -> navigate -> lock on and fire ->
resolve missiles -> log. The log has a header line, one line per tick (tick 0
is the spawn state) and a closing result line, all JSON.
"""
from __future__ import annotations

import json
import math
import traceback
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..arena import (AgentState, FireCommand, Outcome, Team, World, check_termination,
                     in_attack_sector, obstacle_distance, resolve_missiles, step_dynamics)
from ..featnet import Snapshot
from ..nav import Pose, command_to_control, dynamic_window, select_velocity
from ..pfsm import (IfElseAction, RuleConfig, StateId, actions_for, goal_state,
                    initial_state, observe)
from .controllers import Controller, Decision, TickContext


class EpisodeAborted(RuntimeError):
    """A module error stopped the episode; ``log`` holds the diagnostic record."""

    def __init__(self, message: str, log: "EpisodeLog"):
        super().__init__(message)
        self.log = log


@dataclass
class EpisodeLog:
    header: dict
    ticks: list = field(default_factory=list)
    result: dict = field(default_factory=dict)

    def lines(self) -> list[str]:
        recs = [{"kind": "header", **self.header}]
        recs += [{"kind": "tick", **t} for t in self.ticks]
        if self.result:
            recs.append({"kind": "result", **self.result})
        return [json.dumps(r, sort_keys=True, separators=(",", ":")) for r in recs]

    def dumps(self) -> str:
        return "\n".join(self.lines()) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "EpisodeLog":
        log = cls(header={})
        for line in text.splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            kind = rec.pop("kind")
            if kind == "header":
                log.header = rec
            elif kind == "tick":
                log.ticks.append(rec)
            elif kind == "result":
                log.result = rec
            else:
                raise ValueError(f"unknown record kind {kind!r}")
        return log

    @classmethod
    def read(cls, path: str | Path) -> "EpisodeLog":
        return cls.loads(Path(path).read_text())


# --------------------------------------------------------------------------
# spawning


def spawn_agents(cfg, n_red: int, n_blue: int, rng: np.random.Generator) -> list[AgentState]:
    """Independent draws from two mirrored strips at the left and right edges."""
    arena, h = cfg.arena, cfg.harness
    agents: list[AgentState] = []
    for team, n in ((Team.RED, n_red), (Team.BLUE, n_blue)):
        placed: list[np.ndarray] = []
        for _ in range(n):
            for _attempt in range(1000):
                x = rng.uniform(h.spawn_margin, h.spawn_margin + h.spawn_depth)
                y = rng.uniform(h.spawn_margin, arena.height - h.spawn_margin)
                p = np.array([x if team is Team.RED else arena.width - x, y])
                far = all(np.hypot(*(p - q)) >= h.spawn_separation for q in placed)
                clear = (not arena.polygons
                         or obstacle_distance(p[None], arena.polygons)[0] > 0.5)
                if far and clear:
                    break
            else:
                raise RuntimeError("could not place agents; spawn strip too crowded")
            placed.append(p)
        for p in placed:
            agents.append(AgentState(id=len(agents), team=team, position=p, velocity=np.zeros(2),
                                     missiles=arena.missiles,
                                     heading=0.0 if team is Team.RED else math.pi))
    return agents


# --------------------------------------------------------------------------
# behaviors: where to go and whom to aim at


@dataclass
class Memory:
    target: int | None = None
    last_seen: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Plan:
    goal: np.ndarray
    target: int | None = None


class Behaviors:
    """Turns a behavioral state into a navigation goal and an optional fire target."""

    def __init__(self, cfg, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        self.memory: dict[int, Memory] = {}
        # team-shared sightings: team -> enemy id -> (tick, position)
        self.intel: dict[Team, dict[int, tuple[int, np.ndarray]]] = {Team.RED: {}, Team.BLUE: {}}
        # one patrol waypoint per team keeps searchers within reach of each other
        self.waypoints: dict[Team, np.ndarray | None] = {Team.RED: None, Team.BLUE: None}

    def observe(self, world: World, observations) -> None:
        for aid, obs in observations.items():
            team = world.agent(aid).team
            for e in obs.enemies:
                self.intel[team][e.id] = (world.tick, world.agent(e.id).position.copy())

    def _planning_point(self, world: World, agent: AgentState) -> np.ndarray:
        """Freshest shared sighting of a living enemy, else a patrol waypoint."""
        h = self.cfg.harness
        intel = self.intel[agent.team]
        fresh = [(tick, eid) for eid, (tick, _) in intel.items()
                 if world.agent(eid).alive and world.tick - tick <= h.intel_horizon]
        while fresh:
            tick, eid = max(fresh)
            p = intel[eid][1]
            if np.hypot(*(p - agent.position)) > h.waypoint_tolerance:
                return p
            # reached a stale sighting with nothing in view: forget it
            del intel[eid]
            fresh.remove((tick, eid))
        return self._waypoint(agent)

    def _waypoint(self, agent: AgentState) -> np.ndarray:
        """Team patrol point drawn uniformly over the free arena; kept until reached."""
        h, arena = self.cfg.harness, self.cfg.arena
        wp = self.waypoints[agent.team]
        if wp is not None and np.hypot(*(wp - agent.position)) > h.waypoint_tolerance:
            return wp
        for _ in range(100):
            p = np.array([self.rng.uniform(h.spawn_margin, arena.width - h.spawn_margin),
                          self.rng.uniform(h.spawn_margin, arena.height - h.spawn_margin)])
            if obstacle_distance(p[None], arena.polygons)[0] > 0.5:
                break
        self.waypoints[agent.team] = p
        return p

    def _track(self, world: World, agent: AgentState, obs) -> Plan:
        mem = self.memory[agent.id]
        seen = {e.id: e for e in obs.enemies}
        if seen:
            if mem.target not in seen:
                mem.target = max(obs.enemies, key=lambda e: (e.advantage, -e.distance)).id
            t = world.agent(mem.target)
            return Plan(t.position + self.cfg.harness.lead_time * t.velocity, mem.target)
        if mem.target in mem.last_seen:
            return Plan(mem.last_seen[mem.target])
        return Plan(self._waypoint(agent))

    def _escape_samples(self, world: World, agent: AgentState, obs) -> tuple[np.ndarray, np.ndarray]:
        """Candidate refuges around the agent and their distance to the nearest threat."""
        threats = np.array([world.agent(e.id).position for e in obs.enemies])
        arena, h = self.cfg.arena, self.cfg.harness
        angles = np.arange(16) * (2 * math.pi / 16)
        pts = agent.position + h.escape_radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        pts[:, 0] = np.clip(pts[:, 0], 0.3, arena.width - 0.3)
        pts[:, 1] = np.clip(pts[:, 1], 0.3, arena.height - 0.3)
        score = np.min(np.linalg.norm(pts[:, None, :] - threats[None], axis=2), axis=1)
        if arena.polygons:
            score = np.where(obstacle_distance(pts, arena.polygons) < 0.3, -np.inf, score)
        return pts, score

    def _escape(self, world: World, agent: AgentState, obs) -> Plan:
        if not obs.enemies:
            return Plan(self._planning_point(world, agent))
        pts, score = self._escape_samples(world, agent, obs)
        return Plan(pts[int(np.argmax(score))])

    def _regroup(self, world: World, agent: AgentState, obs, mate: AgentState) -> Plan:
        """Head for a teammate, but only through directions nearly as safe as the best one."""
        if not obs.enemies:
            return Plan(mate.position.copy())
        pts, score = self._escape_samples(world, agent, obs)
        safe = score >= self.cfg.harness.regroup_safety * score.max()
        d = np.where(safe, np.linalg.norm(pts - mate.position, axis=1), np.inf)
        return Plan(pts[int(np.argmin(d))])

    def _caller_threat(self, world: World, caller: AgentState) -> np.ndarray:
        """Where to engage on behalf of a teammate calling for help."""
        sighted = [(float(np.hypot(*(pos - caller.position))), eid, pos)
                   for eid, (tick, pos) in self.intel[caller.team].items()
                   if world.agent(eid).alive and world.tick - tick <= 10]
        near = [x for x in sighted if x[0] <= self.cfg.sensors.r_d * 2]
        return min(near, key=lambda x: x[:2])[2] if near else caller.position.copy()

    def _nearest(self, agent: AgentState, others: list[AgentState]) -> AgentState | None:
        if not others:
            return None
        return min(others, key=lambda o: (np.hypot(*(o.position - agent.position)), o.id))

    def plan(self, world: World, agent: AgentState, decision: Decision, obs) -> Plan:
        mem = self.memory.setdefault(agent.id, Memory())
        for e in obs.enemies:
            mem.last_seen[e.id] = world.agent(e.id).position.copy()
        if decision.rule is not None:
            rule = decision.rule
            if rule.action is IfElseAction.PATROL:
                return Plan(self._planning_point(world, agent))
            t = world.agent(rule.target)
            return Plan(t.position + self.cfg.harness.lead_time * t.velocity, rule.target)
        s = decision.state
        mates = [m for m in world.team(agent.team) if m.id != agent.id]
        if s == StateId.TRACK:
            return self._track(world, agent, obs)
        if s == StateId.ESCAPE:
            return self._escape(world, agent, obs)
        if s == StateId.COOPERATE:
            near = self._nearest(agent, mates)
            return self._regroup(world, agent, obs, near) if near is not None else self._escape(world, agent, obs)
        if s == StateId.SUPPORT:
            caller = self._nearest(agent, [m for m in mates if m.behavior == StateId.COOPERATE])
            if caller is not None:
                return Plan(self._caller_threat(world, caller))
            near = self._nearest(agent, mates)
            return Plan(near.position.copy()) if near is not None else Plan(self._planning_point(world, agent))
        return Plan(self._planning_point(world, agent))


# --------------------------------------------------------------------------
# the loop


def snapshot(world: World) -> Snapshot:
    ag = world.agents
    return Snapshot(
        tick=world.tick,
        ids=np.array([a.id for a in ag]),
        red=np.array([a.team is Team.RED for a in ag]),
        positions=np.array([a.position for a in ag]),
        velocities=np.array([a.velocity for a in ag]),
        headings=np.array([a.heading for a in ag]),
        behaviors=np.array([int(a.behavior) for a in ag]),
        missiles=np.array([a.missiles for a in ag]),
        alive=np.array([a.alive for a in ag]),
    )


def _agent_record(a: AgentState, goal: StateId | None, decided: bool, actions: list[str],
                  seen: list[int] | None = None) -> dict:
    return {
        "id": a.id,
        "team": a.team.value,
        "x": float(a.position[0]),
        "y": float(a.position[1]),
        "vx": float(a.velocity[0]),
        "vy": float(a.velocity[1]),
        "heading": float(a.heading),
        "behavior": StateId(a.behavior).label,
        "goal": None if goal is None else StateId(goal).label,
        "missiles": int(a.missiles),
        "alive": bool(a.alive),
        "decided": decided,
        "actions": actions,
        "seen": seen or [],
    }


def _executed_actions(decision: Decision, fired: bool) -> list[str]:
    if decision.rule is not None:
        return [decision.rule.action.value]
    acts = list(actions_for(decision.state))
    if "Launch missiles" in acts and not fired:
        acts.remove("Launch missiles")
    return acts


def place_agents(cfg, layout: dict) -> list[AgentState]:
    """Agents at fixed poses: ``{"red": [[x, y, heading], ...], "blue": [...]}``."""
    agents: list[AgentState] = []
    for team in (Team.RED, Team.BLUE):
        for x, y, heading in layout.get(team.value, []):
            agents.append(AgentState(id=len(agents), team=team, position=np.array([x, y], float),
                                     velocity=np.zeros(2), missiles=cfg.arena.missiles,
                                     heading=float(heading)))
    return agents


def run_episode(cfg, red: Controller, blue: Controller, n_red: int, n_blue: int, seed: int,
                checkpoint: dict | None = None, layout: dict | None = None) -> EpisodeLog:
    """Play one confrontation to termination and return its log.

    Agents spawn at random in the team strips unless ``layout`` fixes their
    poses, in which case ``n_red`` and ``n_blue`` must match it.
    """
    rng = np.random.default_rng(seed)
    if layout is None:
        agents = spawn_agents(cfg, n_red, n_blue, rng)
    else:
        agents = place_agents(cfg, layout)
        if (len(layout.get("red", [])), len(layout.get("blue", []))) != (n_red, n_blue):
            raise ValueError("layout does not match the team sizes")
    for a in agents:
        a.behavior = int(initial_state(cfg.pfsm, rng))
    world = World(cfg.arena, cfg.sensors, agents)
    header = {
        "seed": int(seed),
        "red": red.describe(),
        "blue": blue.describe(),
        "n_red": n_red,
        "n_blue": n_blue,
        "checkpoint": checkpoint,
        "layout": layout,
        "config": cfg.to_dict(),
        "agents": [{"id": a.id, "team": a.team.value} for a in agents],
    }
    log = EpisodeLog(header)
    controllers = {Team.RED: red, Team.BLUE: blue}
    red.reset(world, Team.RED)
    blue.reset(world, Team.BLUE)
    behaviors = Behaviors(cfg, rng)
    rules = RuleConfig(cfg.harness.turn_rate, cfg.arena.v_max, cfg.harness.cooperate_radius)
    history: list[Snapshot] = []
    log.ticks.append({"tick": 0, "agents": [_agent_record(a, None, False, []) for a in agents],
                      "fires": []})
    try:
        outcome = check_termination(world)
        while outcome is Outcome.ONGOING:
            _tick(world, cfg, controllers, behaviors, rules, history, log)
            outcome = check_termination(world)
    except Exception as exc:
        log.result = {"outcome": "Error", "tick": world.tick, "error": type(exc).__name__,
                      "message": str(exc), "where": traceback.format_exc(limit=3).splitlines()[-3:]}
        raise EpisodeAborted(f"episode {seed} aborted at tick {world.tick}: {exc}", log) from exc
    for c in controllers.values():
        c.finish(world)
    log.result = {
        "outcome": outcome.value,
        "tick": world.tick,
        "red_alive": len(world.team(Team.RED)),
        "blue_alive": len(world.team(Team.BLUE)),
        "rejected_fires": world.rejected_fires,
    }
    return log


def _tick(world: World, cfg, controllers, behaviors: Behaviors, rules: RuleConfig,
          history: list, log: EpisodeLog) -> None:
    history.append(snapshot(world))
    del history[: -cfg.features.window]
    living = [a for a in world.agents if a.alive]
    obs = {a.id: observe(world, a, rules) for a in living}
    goals = {a.id: goal_state(obs[a.id], cfg.harness.commit_margin, cfg.harness.engage_margin)
             for a in living}
    ctx = TickContext(world, obs, goals, history)
    behaviors.observe(world, obs)

    decisions: dict[int, Decision] = {}
    for team, ctrl in controllers.items():
        decisions.update(ctrl.decide(ctx, [a for a in living if a.team is team]))
    for a in living:
        a.behavior = int(decisions[a.id].state)

    plans = {a.id: behaviors.plan(world, a, decisions[a.id], obs[a.id]) for a in living}
    arena, dwa = cfg.arena, cfg.dwa
    for a in living:
        if controllers[a.team].stationary:
            u = -a.velocity / arena.dt
            new = step_dynamics(a, u, arena.dt, arena)
        else:
            window = dynamic_window(a.speed, a.omega, dwa)
            pose = Pose(float(a.position[0]), float(a.position[1]), a.heading)
            cmd = select_velocity(window, pose, plans[a.id].goal, arena.polygons, dwa,
                                  (arena.width, arena.height))
            u, heading = command_to_control(a.velocity, a.heading, cmd, arena.dt)
            new = step_dynamics(a, u, arena.dt, arena)
            if new.speed == 0.0:
                new.heading = heading
            new.omega = cmd.omega
        world.set_agent(new)

    commands = []
    for a in living:
        agent = world.agent(a.id)
        if agent.cooldown > 0:
            agent.cooldown -= 1
        target = plans[a.id].target
        if target is None or not world.agent(target).alive:
            agent.lock_target, agent.lock_ticks = None, 0
            continue
        enemy = world.agent(target)
        if in_attack_sector(agent, enemy, world.sensors) and world.line_of_sight(agent, enemy):
            agent.lock_ticks = agent.lock_ticks + 1 if agent.lock_target == target else 1
            agent.lock_target = target
        else:
            agent.lock_target, agent.lock_ticks = target, 0
        if agent.lock_ticks >= arena.lock_ticks and agent.cooldown == 0 and agent.missiles > 0:
            commands.append(FireCommand(agent.id, target))
    events = resolve_missiles(world, commands)
    fired = {e.shooter for e in events}
    executed = {a.id: _executed_actions(decisions[a.id], a.id in fired) for a in living}
    world.tick += 1

    for team, ctrl in controllers.items():
        ctrl.after_tick(world, {k: v for k, v in executed.items() if world.agent(k).team is team}, events)
    decided = {a.id for a in living}
    log.ticks.append({
        "tick": world.tick,
        "agents": [_agent_record(a, goals.get(a.id), a.id in decided, executed.get(a.id, []),
                                 [e.id for e in obs[a.id].enemies] if a.id in obs else None)
                   for a in world.agents],
        "fires": [[e.shooter, e.target] for e in events],
    })
