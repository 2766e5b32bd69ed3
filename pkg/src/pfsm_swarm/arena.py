"""Deterministic 2D confrontation world.

Agents are point masses with double-integrator dynamics, a circular perception
range and a forward attack cone aligned with their velocity. Missiles hit
instantly when the target sits inside the attack cone with a clear line of
sight.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

V_MAX = 1.5
MAX_MISSILES = 2


class InvalidControlError(ValueError):
    """Raised when a control input is not a finite 2-vector."""


class Team(str, enum.Enum):
    RED = "red"
    BLUE = "blue"

    @property
    def opponent(self) -> "Team":
        return Team.BLUE if self is Team.RED else Team.RED


class Outcome(str, enum.Enum):
    RED_WIN = "RedWin"
    BLUE_WIN = "BlueWin"
    DRAW = "Draw"
    ONGOING = "Ongoing"


@dataclass
class AgentState:
    id: int
    team: Team
    position: np.ndarray
    velocity: np.ndarray
    control: np.ndarray = field(default_factory=lambda: np.zeros(2))
    missiles: int = MAX_MISSILES
    alive: bool = True
    behavior: int = 0
    # heading survives zero-speed ticks; omega is the planner's turn rate
    heading: float = 0.0
    omega: float = 0.0
    cooldown: int = 0
    lock_target: int | None = None
    lock_ticks: int = 0

    def __post_init__(self) -> None:
        self.position = np.asarray(self.position, dtype=float).reshape(2)
        self.velocity = np.asarray(self.velocity, dtype=float).reshape(2)
        self.control = np.asarray(self.control, dtype=float).reshape(2)
        if np.hypot(*self.velocity) > 0:
            self.heading = math.atan2(self.velocity[1], self.velocity[0])

    @property
    def speed(self) -> float:
        return float(math.hypot(self.velocity[0], self.velocity[1]))

    def copy(self) -> "AgentState":
        return replace(
            self,
            position=self.position.copy(),
            velocity=self.velocity.copy(),
            control=self.control.copy(),
        )


@dataclass(frozen=True)
class SensorSpec:
    r_d: float = 2.0
    r_s: float = 1.5
    theta_d: float = 2 * math.pi
    theta_s: float = math.radians(80.0)

    def __post_init__(self) -> None:
        if not self.r_d > self.r_s > 0:
            raise ValueError(f"need r_d > r_s > 0, got r_d={self.r_d}, r_s={self.r_s}")
        if not 0 < self.theta_s <= self.theta_d <= 2 * math.pi + 1e-12:
            raise ValueError("need 0 < theta_s <= theta_d <= 2*pi")


def _as_polygon(points: Sequence[Sequence[float]]) -> np.ndarray:
    poly = np.asarray(points, dtype=float)
    if poly.ndim != 2 or poly.shape[1] != 2 or len(poly) < 3:
        raise ValueError("obstacle must be a list of >= 3 (x, y) vertices")
    # orient counter-clockwise
    x, y = poly[:, 0], poly[:, 1]
    area2 = float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))
    if area2 < 0:
        poly = poly[::-1].copy()
    if not _is_convex(poly):
        raise ValueError("obstacles must be convex polygons")
    return poly


def _is_convex(poly: np.ndarray) -> bool:
    e = np.roll(poly, -1, axis=0) - poly
    cross = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
    return bool(np.all(cross >= -1e-12))


def _polygons_overlap(a: np.ndarray, b: np.ndarray) -> bool:
    """Separating-axis test for two convex polygons (touching counts as no overlap)."""
    for poly in (a, b):
        edges = np.roll(poly, -1, axis=0) - poly
        for ex, ey in edges:
            axis = np.array([-ey, ex])
            pa, pb = a @ axis, b @ axis
            if pa.max() <= pb.min() + 1e-12 or pb.max() <= pa.min() + 1e-12:
                return False
    return True


def default_obstacles() -> list[list[list[float]]]:
    """Two blocks in the middle of the 22 x 15 field, leaving three lanes."""
    return [
        [[10.0, 3.5], [12.0, 3.5], [12.0, 6.0], [10.0, 6.0]],
        [[10.0, 9.0], [12.0, 9.0], [12.0, 11.5], [10.0, 11.5]],
    ]


@dataclass
class ArenaConfig:
    width: float = 22.0
    height: float = 15.0
    obstacles: list = field(default_factory=default_obstacles)
    dt: float = 0.1
    max_ticks: int = 512
    seed: int = 0
    v_max: float = V_MAX
    missiles: int = MAX_MISSILES
    missile_cooldown: int = 10
    # consecutive in-sector ticks a tracker needs before it may launch
    lock_ticks: int = 5

    def __post_init__(self) -> None:
        if not (self.width > 0 and self.height > 0):
            raise ValueError("arena width and height must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        self.polygons = [_as_polygon(o) for o in self.obstacles]
        for poly in self.polygons:
            if (poly[:, 0].min() < 0 or poly[:, 1].min() < 0
                    or poly[:, 0].max() > self.width or poly[:, 1].max() > self.height):
                raise ValueError("obstacle lies outside the arena bounds")
        for i in range(len(self.polygons)):
            for j in range(i + 1, len(self.polygons)):
                if _polygons_overlap(self.polygons[i], self.polygons[j]):
                    raise ValueError(f"obstacles {i} and {j} overlap")


@dataclass(frozen=True)
class RelativeGeometry:
    distance: float
    angle: float


# --------------------------------------------------------------------------
# polygon helpers


def point_in_polygon(p: np.ndarray, poly: np.ndarray) -> bool:
    """Strict interior test for a CCW convex polygon."""
    a = poly
    b = np.roll(poly, -1, axis=0)
    cross = (b[:, 0] - a[:, 0]) * (p[1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (p[0] - a[:, 0])
    return bool(np.all(cross > 1e-12))


def points_to_segments_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance of each point (M, 2) to each segment a[k]-b[k] -> (M, K)."""
    ab = b - a
    denom = np.maximum(np.einsum("kd,kd->k", ab, ab), 1e-18)
    ap = points[:, None, :] - a[None, :, :]
    t = np.clip(np.einsum("mkd,kd->mk", ap, ab) / denom, 0.0, 1.0)
    closest = a[None] + t[..., None] * ab[None]
    return np.linalg.norm(points[:, None, :] - closest, axis=-1)


def obstacle_distance(points: np.ndarray, polygons: Iterable[np.ndarray],
                      cutoff: float | None = None) -> np.ndarray:
    """Signed-ish distance to the nearest obstacle: 0 inside, boundary distance outside.

    With ``cutoff``, points whose distance is certainly at least ``cutoff``
    (judged from the obstacles' bounding boxes) are reported as inf.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    polygons = list(polygons)
    if not polygons:
        return np.full(len(points), np.inf)
    if cutoff is not None:
        lo = np.array([p.min(axis=0) for p in polygons])
        hi = np.array([p.max(axis=0) for p in polygons])
        gap = np.maximum(np.maximum(lo[None] - points[:, None], points[:, None] - hi[None]), 0.0)
        near = (np.hypot(gap[..., 0], gap[..., 1]) < cutoff).any(axis=1)
        out = np.full(len(points), np.inf)
        if near.any():
            out[near] = obstacle_distance(points[near], polygons)
        return out
    a = np.concatenate(polygons)
    b = np.concatenate([np.roll(p, -1, axis=0) for p in polygons])
    ab = b - a
    denom = np.maximum(ab[:, 0] ** 2 + ab[:, 1] ** 2, 1e-18)
    apx = points[:, 0:1] - a[None, :, 0]
    apy = points[:, 1:2] - a[None, :, 1]
    t = np.clip((apx * ab[:, 0] + apy * ab[:, 1]) / denom, 0.0, 1.0)
    d2 = (apx - t * ab[:, 0]) ** 2 + (apy - t * ab[:, 1]) ** 2
    best = np.sqrt(d2.min(axis=1))
    cross = ab[:, 0] * apy - ab[:, 1] * apx
    start = 0
    for poly in polygons:
        stop = start + len(poly)
        best[np.all(cross[:, start:stop] > 0, axis=1)] = 0.0
        start = stop
    return best


def segment_blocked(a: np.ndarray, b: np.ndarray, polygons: Iterable[np.ndarray]) -> bool:
    """True when segment a-b passes through the interior of any obstacle.

    Cyrus-Beck clipping against each convex polygon; grazing a vertex or
    running along an edge does not block.
    """
    d = b - a
    for poly in polygons:
        t0, t1 = 0.0, 1.0
        edges = np.roll(poly, -1, axis=0) - poly
        for k in range(len(poly)):
            # inside is to the left of each CCW edge: n . (x - v_k) > 0
            n = np.array([-edges[k, 1], edges[k, 0]])
            num = float(np.dot(n, a - poly[k]))
            den = float(np.dot(n, d))
            if den == 0.0:
                if num <= 0.0:
                    t0, t1 = 1.0, 0.0
                    break
                continue
            t = -num / den
            if den > 0:
                t0 = max(t0, t)
            else:
                t1 = min(t1, t)
            if t0 > t1:
                break
        if t1 - t0 > 1e-12 and point_in_polygon(a + 0.5 * (t0 + t1) * d, poly):
            return True
    return False


def _push_out(p: np.ndarray, v: np.ndarray, poly: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a, b = poly, np.roll(poly, -1, axis=0)
    d = points_to_segments_distance(p[None], a, b)[0]
    k = int(np.argmin(d))
    edge = b[k] - a[k]
    t = np.clip(np.dot(p - a[k], edge) / max(np.dot(edge, edge), 1e-18), 0.0, 1.0)
    q = a[k] + t * edge
    normal = np.array([edge[1], -edge[0]]) / max(np.hypot(*edge), 1e-18)  # outward for CCW
    p_new = q + 1e-9 * normal
    into = float(np.dot(v, normal))
    v_new = v - into * normal if into < 0 else v
    return p_new, v_new


# --------------------------------------------------------------------------
# operations


def step_dynamics(state: AgentState, u, dt: float, arena: ArenaConfig | None = None,
                  v_max: float = V_MAX) -> AgentState:
    """Advance one agent by one symplectic-Euler step.

    Velocity is updated first and clamped to ``v_max``; the position then moves
    with the new velocity. With an arena, the agent is clipped to the bounds and
    slid along any obstacle it would enter. Dead agents are returned unchanged.
    """
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.shape != (2,) or not np.all(np.isfinite(u)):
        raise InvalidControlError(f"control must be a finite 2-vector, got {u!r}")
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not state.alive:
        return state.copy()
    if arena is not None:
        v_max = arena.v_max

    v = state.velocity + u * dt
    speed = math.hypot(v[0], v[1])
    if speed > v_max:
        v = v * (v_max / speed)
    p = state.position + v * dt

    if arena is not None:
        for axis, hi in ((0, arena.width), (1, arena.height)):
            if p[axis] < 0.0:
                p[axis] = 0.0
                v[axis] = max(v[axis], 0.0)
            elif p[axis] > hi:
                p[axis] = hi
                v[axis] = min(v[axis], 0.0)
        for poly in arena.polygons:
            if point_in_polygon(p, poly):
                p, v = _push_out(p, v, poly)

    new = state.copy()
    new.position = p
    new.velocity = v
    new.control = u.copy()
    if math.hypot(v[0], v[1]) > 0:
        new.heading = math.atan2(v[1], v[0])
    return new


def relative_geometry(i: AgentState, j: AgentState) -> RelativeGeometry:
    """Distance from i to j and the angle between i's velocity and the bearing to j.

    The angle is pi when i is stationary or when the two agents coincide.
    """
    dx = j.position[0] - i.position[0]
    dy = j.position[1] - i.position[1]
    d = math.hypot(dx, dy)
    vx, vy = i.velocity
    speed = math.hypot(vx, vy)
    if speed == 0.0 or d == 0.0:
        return RelativeGeometry(d, math.pi)
    c = (dx * vx + dy * vy) / (d * speed)
    return RelativeGeometry(d, math.acos(max(-1.0, min(1.0, c))))


def in_perception(observer: AgentState, target: AgentState, spec: SensorSpec) -> bool:
    if not (observer.alive and target.alive):
        return False
    g = relative_geometry(observer, target)
    if g.distance > spec.r_d:
        return False
    if spec.theta_d >= 2 * math.pi:
        return True
    return g.angle <= spec.theta_d / 2


def in_attack_sector(observer: AgentState, target: AgentState, spec: SensorSpec) -> bool:
    if not (observer.alive and target.alive) or observer.speed == 0.0:
        return False
    g = relative_geometry(observer, target)
    return g.distance <= spec.r_s and g.angle <= spec.theta_s / 2


@dataclass(frozen=True)
class FireCommand:
    shooter: int
    target: int


@dataclass(frozen=True)
class FireEvent:
    shooter: int
    target: int


class World:
    """Mutable container for one confrontation; one step loop owns it at a time."""

    def __init__(self, config: ArenaConfig, sensors: SensorSpec, agents: list[AgentState]):
        self.config = config
        self.sensors = sensors
        self.agents = agents
        self.tick = 0
        self.rejected_fires = 0
        self._index = {a.id: k for k, a in enumerate(agents)}
        if len(self._index) != len(agents):
            raise ValueError("agent ids must be unique")

    def agent(self, agent_id: int) -> AgentState:
        return self.agents[self._index[agent_id]]

    def team(self, team: Team, alive_only: bool = True) -> list[AgentState]:
        return [a for a in self.agents if a.team is team and (a.alive or not alive_only)]

    def set_agent(self, state: AgentState) -> None:
        self.agents[self._index[state.id]] = state

    def line_of_sight(self, a: AgentState, b: AgentState) -> bool:
        return not segment_blocked(a.position, b.position, self.config.polygons)

    def perceived_by(self, observer: AgentState) -> list[AgentState]:
        if not observer.alive:
            return []
        return [o for o in self.agents
                if o.team is not observer.team and in_perception(observer, o, self.sensors)]


def resolve_missiles(world: World, commands: Iterable[FireCommand]) -> list[FireEvent]:
    """Validate every launch against the pre-resolution world, then apply them together.

    Invalid launches are dropped (and counted in ``world.rejected_fires``).
    Mutual in-sector launches on the same tick destroy both agents.
    """
    valid: list[FireCommand] = []
    for cmd in commands:
        shooter, target = world.agent(cmd.shooter), world.agent(cmd.target)
        reason = None
        if not shooter.alive:
            reason = "shooter dead"
        elif shooter.missiles <= 0:
            reason = "no missiles"
        elif shooter.cooldown > 0:
            reason = "cooling down"
        elif not target.alive or target.team is shooter.team:
            reason = "invalid target"
        elif not in_attack_sector(shooter, target, world.sensors):
            reason = "target out of sector"
        elif not world.line_of_sight(shooter, target):
            reason = "line of sight blocked"
        if reason is not None:
            world.rejected_fires += 1
            log.debug("tick %d: launch %d->%d ignored (%s)", world.tick, cmd.shooter, cmd.target, reason)
            continue
        valid.append(cmd)

    events = []
    for cmd in valid:
        shooter = world.agent(cmd.shooter)
        shooter.missiles -= 1
        shooter.cooldown = world.config.missile_cooldown
        events.append(FireEvent(cmd.shooter, cmd.target))
    for ev in events:
        world.agent(ev.target).alive = False
    for ev in events:
        t = world.agent(ev.target)
        t.velocity = np.zeros(2)
        t.control = np.zeros(2)
    return events


def check_termination(world: World) -> Outcome:
    red_alive = any(a.alive for a in world.agents if a.team is Team.RED)
    blue_alive = any(a.alive for a in world.agents if a.team is Team.BLUE)
    if not red_alive and not blue_alive:
        return Outcome.DRAW
    if not blue_alive:
        return Outcome.RED_WIN
    if not red_alive:
        return Outcome.BLUE_WIN
    if world.tick >= world.config.max_ticks:
        return Outcome.DRAW
    return Outcome.ONGOING
