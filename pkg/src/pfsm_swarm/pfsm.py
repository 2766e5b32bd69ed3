"""Probabilistic finite state machine plus the rule-based baselines.

The machine has five behavioral states, each bound to a fixed bundle of
actions. Transitions are read off a row-stochastic matrix: the next state is
the argmax of the current state's row. The deterministic FSM baseline, the
if-else baseline and the goal-state oracle used for reward shaping and
deadlock counting all share one perception summary, :class:`Observation`.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .arena import AgentState, SensorSpec, World, in_attack_sector, relative_geometry


class ConfigurationError(ValueError):
    pass


class StructuralDeadlockError(RuntimeError):
    """A transition row has no probability mass at all."""


class StateId(enum.IntEnum):
    SEARCH = 0
    TRACK = 1
    ESCAPE = 2
    COOPERATE = 3
    SUPPORT = 4

    @property
    def label(self) -> str:
        return self.name.capitalize()

    def one_hot(self) -> np.ndarray:
        v = np.zeros(N_STATES)
        v[int(self)] = 1.0
        return v


N_STATES = len(StateId)

TABLE_I: dict[StateId, tuple[str, ...]] = {
    StateId.SEARCH: ("Search the Enemy", "Execute Planning Point"),
    StateId.TRACK: ("Lock on to the Enemy", "Launch missiles"),
    StateId.ESCAPE: ("Move to Safe Location",),
    StateId.COOPERATE: ("Send out Help Signal", "Approach Teammates"),
    StateId.SUPPORT: ("Tactical Coordination", "Approach Teammates"),
}


def actions_for(state: StateId | int) -> tuple[str, ...]:
    return TABLE_I[StateId(state)]


@dataclass
class PfsmSpec:
    states: tuple[StateId, ...] = tuple(StateId)
    initial_distribution: np.ndarray = field(
        default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0, 0.0]))
    action_table: dict = field(default_factory=lambda: dict(TABLE_I))
    topology_mask: np.ndarray = field(
        default_factory=lambda: np.ones((N_STATES, N_STATES), dtype=bool))

    def __post_init__(self) -> None:
        self.initial_distribution = np.asarray(self.initial_distribution, dtype=float)
        self.topology_mask = np.asarray(self.topology_mask, dtype=bool)
        if tuple(self.states) != tuple(StateId):
            raise ConfigurationError("states must be Search, Track, Escape, Cooperate, Support")
        if self.initial_distribution.shape != (N_STATES,):
            raise ConfigurationError("initial distribution must have one entry per state")
        if np.any(self.initial_distribution < 0) or abs(self.initial_distribution.sum() - 1.0) > 1e-9:
            raise ConfigurationError(
                f"initial distribution must be non-negative and sum to 1, got {self.initial_distribution}")
        if self.topology_mask.shape != (N_STATES, N_STATES):
            raise ConfigurationError("topology mask must be 5x5")
        if not np.all(self.topology_mask.any(axis=1)):
            raise ConfigurationError("every state needs at least one permitted outgoing edge")
        table = {StateId(k): tuple(v) for k, v in self.action_table.items()}
        if table != TABLE_I:
            raise ConfigurationError("action table must match the state/action correspondence table")


@dataclass(frozen=True)
class TransitionMatrix:
    """Row-stochastic matrix; row = current state, column = next state."""

    probs: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self) -> None:
        p = np.asarray(self.probs, dtype=float)
        object.__setattr__(self, "probs", p)
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise ValueError(f"transition matrix must be square, got shape {p.shape}")
        if not np.all(np.isfinite(p)) or p.min() < 0.0 or p.max() > 1.0:
            raise ValueError("transition probabilities must lie in [0, 1]")
        if np.max(np.abs(p.sum(axis=1) - 1.0)) > 1e-6:
            raise ValueError("each transition row must sum to 1")
        if self.mask is not None:
            m = np.asarray(self.mask, dtype=bool)
            object.__setattr__(self, "mask", m)
            if np.any(p[~m] != 0.0):
                raise ValueError("forbidden edges must carry exactly zero probability")

    def row(self, state: int) -> np.ndarray:
        return self.probs[int(state)]


def next_state(current: StateId | int, P: TransitionMatrix | np.ndarray) -> StateId:
    """Argmax of the current row; ties go to the lowest state index."""
    probs = P.probs if isinstance(P, TransitionMatrix) else np.asarray(P, dtype=float)
    row = probs[int(current)]
    if not np.any(row > 0.0):
        raise StructuralDeadlockError(f"row {StateId(current).label} has no outgoing probability")
    return StateId(int(np.argmax(row)))


def initial_state(spec: PfsmSpec, rng: np.random.Generator) -> StateId:
    dist = np.asarray(spec.initial_distribution, dtype=float)
    if np.any(dist < 0) or abs(dist.sum() - 1.0) > 1e-9:
        raise ConfigurationError("initial distribution is not normalized")
    return StateId(int(rng.choice(N_STATES, p=dist)))


# --------------------------------------------------------------------------
# perception summary shared by baselines and the goal oracle


@dataclass(frozen=True)
class EnemyContact:
    id: int
    distance: float
    angle_to: float
    angle_from: float
    in_sector: bool
    advantage: float


@dataclass(frozen=True)
class Observation:
    agent_id: int
    state: StateId
    missiles: int
    enemies: tuple[EnemyContact, ...] = ()
    teammates_in_range: int = 0
    help_signal: bool = False

    @property
    def armed(self) -> bool:
        return self.missiles > 0


@dataclass(frozen=True)
class RuleConfig:
    turn_rate: float = 2.0
    v_max: float = 1.5
    cooperate_radius: float = 6.0


def time_to_strike(a: AgentState, b: AgentState, sensors: SensorSpec,
                   turn_rate: float = 2.0, v_max: float = 1.5) -> float:
    """Rough time for ``a`` to bring ``b`` inside its attack cone, inf when unarmed."""
    if a.missiles <= 0 or not a.alive:
        return math.inf
    g = relative_geometry(a, b)
    if a.speed == 0.0 and g.distance > 0.0:
        # a stationary agent still has a heading it can turn from
        bearing = math.atan2(b.position[1] - a.position[1], b.position[0] - a.position[0])
        angle = abs((bearing - a.heading + math.pi) % (2 * math.pi) - math.pi)
    else:
        angle = g.angle
    turn = max(0.0, angle - sensors.theta_s / 2) / turn_rate
    close = max(0.0, g.distance - sensors.r_s) / v_max
    return turn + close


def combat_advantage(i: AgentState, j: AgentState, sensors: SensorSpec,
                     turn_rate: float = 2.0, v_max: float = 1.5) -> float:
    """Seconds by which i can strike j before j can strike i (positive favours i)."""
    t_i = time_to_strike(i, j, sensors, turn_rate, v_max)
    t_j = time_to_strike(j, i, sensors, turn_rate, v_max)
    if math.isinf(t_i) and math.isinf(t_j):
        return 0.0
    return float(np.clip(t_j - t_i, -10.0, 10.0))


def observe(world: World, agent: AgentState, rules: RuleConfig = RuleConfig()) -> Observation:
    enemies = []
    for other in world.perceived_by(agent):
        g = relative_geometry(agent, other)
        back = relative_geometry(other, agent)
        enemies.append(EnemyContact(
            id=other.id,
            distance=g.distance,
            angle_to=g.angle,
            angle_from=back.angle,
            in_sector=in_attack_sector(agent, other, world.sensors),
            advantage=combat_advantage(agent, other, world.sensors, rules.turn_rate, rules.v_max),
        ))
    enemies.sort(key=lambda e: (e.distance, e.id))
    mates = [m for m in world.team(agent.team) if m.id != agent.id]
    near = sum(1 for m in mates
               if np.hypot(*(m.position - agent.position)) <= rules.cooperate_radius)
    help_signal = any(m.behavior == StateId.COOPERATE for m in mates)
    return Observation(
        agent_id=agent.id,
        state=StateId(agent.behavior),
        missiles=agent.missiles,
        enemies=tuple(enemies),
        teammates_in_range=near,
        help_signal=help_signal,
    )


def _respect_mask(current: StateId, wanted: StateId, mask: np.ndarray | None) -> StateId:
    if mask is None or mask[current, wanted]:
        return wanted
    if mask[current, current]:
        return current
    return StateId(int(np.flatnonzero(mask[current])[0]))


def fsm_baseline_policy(obs: Observation, mask: np.ndarray | None = None) -> StateId:
    """Fixed-rule FSM: reacts to the current observation only.

    enemy perceived with advantage -> Track; perceived without advantage ->
    Escape, or Cooperate when already escaping with a teammate nearby; help
    signal from a teammate -> Support; otherwise Search.
    """
    if obs.enemies:
        if obs.armed and any(e.advantage > 0 for e in obs.enemies):
            wanted = StateId.TRACK
        elif obs.state in (StateId.ESCAPE, StateId.COOPERATE) and obs.teammates_in_range > 0:
            wanted = StateId.COOPERATE
        else:
            wanted = StateId.ESCAPE
    elif obs.help_signal:
        wanted = StateId.SUPPORT
    else:
        wanted = StateId.SEARCH
    return _respect_mask(obs.state, wanted, mask)


def goal_state(obs: Observation, commit_margin: float = 0.0, engage_margin: float = 0.0) -> StateId:
    """Desired behavioral state used by the task reward and the deadlock counter.

    Same rule table as the FSM, except that an escaping agent should always
    call for help. An armed agent engages while at most ``engage_margin``
    seconds behind, and keeps tracking while at most ``commit_margin``
    seconds behind.
    """
    if obs.enemies:
        best = max(e.advantage for e in obs.enemies)
        margin = max(commit_margin, engage_margin) if obs.state == StateId.TRACK else engage_margin
        if obs.armed and best > -margin:
            return StateId.TRACK
        if obs.state in (StateId.ESCAPE, StateId.COOPERATE):
            return StateId.COOPERATE
        return StateId.ESCAPE
    if obs.help_signal:
        return StateId.SUPPORT
    return StateId.SEARCH


class IfElseAction(enum.Enum):
    FIRE = "fire"
    APPROACH = "approach"
    PATROL = "patrol"


@dataclass(frozen=True)
class IfElseDecision:
    action: IfElseAction
    target: int | None = None

    @property
    def behavior(self) -> StateId:
        # label used only for logging and dwell statistics
        return StateId.SEARCH if self.action is IfElseAction.PATROL else StateId.TRACK


def if_else_baseline_policy(obs: Observation) -> IfElseDecision:
    """Flat condition -> action rules, no memory of previous decisions."""
    for e in obs.enemies:
        if e.in_sector and obs.armed:
            return IfElseDecision(IfElseAction.FIRE, e.id)
    if obs.enemies:
        return IfElseDecision(IfElseAction.APPROACH, obs.enemies[0].id)
    return IfElseDecision(IfElseAction.PATROL)
