"""Dynamic-window local planner.

Candidate (v, omega) pairs are sampled on a grid inside the window reachable
within one control period, rolled out as constant-velocity unicycle arcs, and
scored by a weighted sum of goal heading, obstacle clearance and speed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .arena import obstacle_distance

TIE_TOL = 1e-12


@dataclass(frozen=True)
class DwaConfig:
    a_v_max: float = 0.5
    a_w_max: float = 2.0
    dt: float = 0.1
    v_min: float = 0.0
    v_max: float = 1.5
    w_max: float = 2.0
    n_v: int = 5
    n_w: int = 9
    w_heading: float = 0.5
    w_clearance: float = 0.3
    w_speed: float = 0.2
    horizon: float = 1.0
    clearance_cap: float = 1.0
    agent_radius: float = 0.15

    def __post_init__(self) -> None:
        if self.n_v < 2 or self.n_w < 2:
            raise ValueError("sample counts must be >= 2")
        weights = (self.w_heading, self.w_clearance, self.w_speed)
        if min(weights) < 0 or sum(weights) == 0:
            raise ValueError("objective weights must be >= 0 and not all zero")
        if not self.horizon > self.dt:
            raise ValueError("horizon must exceed dt")
        if not (self.a_v_max > 0 and self.a_w_max > 0 and self.dt > 0):
            raise ValueError("accelerations and dt must be positive")


@dataclass(frozen=True)
class DynamicWindow:
    v_lo: float
    v_hi: float
    w_lo: float
    w_hi: float

    def contains(self, v: float, w: float, tol: float = 1e-12) -> bool:
        return (self.v_lo - tol <= v <= self.v_hi + tol) and (self.w_lo - tol <= w <= self.w_hi + tol)


@dataclass(frozen=True)
class VelocityCommand:
    v: float
    omega: float
    score: float = float("nan")
    emergency: bool = False


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    heading: float


def dynamic_window(v_c: float, w_c: float, cfg: DwaConfig) -> DynamicWindow:
    v_c = min(max(v_c, cfg.v_min), cfg.v_max)
    w_c = min(max(w_c, -cfg.w_max), cfg.w_max)
    dv = cfg.a_v_max * cfg.dt
    dw = cfg.a_w_max * cfg.dt
    return DynamicWindow(
        v_lo=max(v_c - dv, cfg.v_min),
        v_hi=min(v_c + dv, cfg.v_max),
        w_lo=max(w_c - dw, -cfg.w_max),
        w_hi=min(w_c + dw, cfg.w_max),
    )


def candidate_grid(window: DynamicWindow, cfg: DwaConfig) -> tuple[np.ndarray, np.ndarray]:
    """Flattened (v, omega) candidates, v-major order."""
    vs = np.linspace(window.v_lo, window.v_hi, cfg.n_v)
    ws = np.linspace(window.w_lo, window.w_hi, cfg.n_w)
    v, w = np.meshgrid(vs, ws, indexing="ij")
    return v.ravel(), w.ravel()


def rollout(pose: Pose, v: np.ndarray, w: np.ndarray, cfg: DwaConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unicycle arcs: heading turns first, then the agent moves, every dt."""
    steps = int(round(cfg.horizon / cfg.dt))
    k = np.arange(1, steps + 1)
    theta = pose.heading + np.outer(w, k) * cfg.dt
    xs = pose.x + np.cumsum(v[:, None] * np.cos(theta) * cfg.dt, axis=1)
    ys = pose.y + np.cumsum(v[:, None] * np.sin(theta) * cfg.dt, axis=1)
    return xs, ys, theta


def score_candidates(pose: Pose, goal: Sequence[float], v: np.ndarray, w: np.ndarray,
                     polygons: Sequence[np.ndarray], cfg: DwaConfig,
                     bounds: tuple[float, float] | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (objective, colliding, min_clearance) for each candidate.

    Clearances beyond ``max(clearance_cap, agent_radius)`` are reported as inf;
    they neither change the capped clearance term nor the collision test.
    """
    xs, ys, theta = rollout(pose, v, w, cfg)
    n, steps = xs.shape
    pts = np.stack([xs.ravel(), ys.ravel()], axis=1)
    if polygons:
        cutoff = max(cfg.clearance_cap, cfg.agent_radius)
        clear = obstacle_distance(pts, polygons, cutoff).reshape(n, steps)
        start_clear = float(obstacle_distance(np.array([[pose.x, pose.y]]), polygons, cutoff)[0])
    else:
        clear = np.full((n, steps), np.inf)
        start_clear = np.inf
    min_clear = clear.min(axis=1)
    # an agent already brushing an obstacle may still move away from it
    limit = min(cfg.agent_radius, start_clear - 1e-9)
    colliding = min_clear < limit
    if bounds is not None:
        X, Y = bounds
        out = (xs < 0) | (xs > X) | (ys < 0) | (ys > Y)
        colliding |= out.any(axis=1)

    gx, gy = float(goal[0]), float(goal[1])
    fx, fy, ft = xs[:, -1], ys[:, -1], theta[:, -1]
    bearing = np.arctan2(gy - fy, gx - fx)
    err = np.abs((bearing - ft + np.pi) % (2 * np.pi) - np.pi)
    at_goal = np.hypot(gx - fx, gy - fy) < 1e-9
    heading = np.where(at_goal, 1.0, 1.0 - err / np.pi)
    clearance = np.minimum(min_clear, cfg.clearance_cap) / cfg.clearance_cap
    speed = v / cfg.v_max
    g = cfg.w_heading * heading + cfg.w_clearance * clearance + cfg.w_speed * speed
    return g, colliding, min_clear


def pick_best(g: np.ndarray, w: np.ndarray, allowed: np.ndarray) -> int:
    """Argmax with ties (within TIE_TOL) broken by smaller |omega|, then lower index."""
    idx = np.flatnonzero(allowed)
    best = g[idx].max()
    tied = idx[g[idx] >= best - TIE_TOL]
    abs_w = np.abs(w[tied])
    tied = tied[abs_w <= abs_w.min() + TIE_TOL]
    return int(tied[0])


def select_velocity(window: DynamicWindow, pose: Pose, goal: Sequence[float],
                    polygons: Sequence[np.ndarray], cfg: DwaConfig,
                    bounds: tuple[float, float] | None = None) -> VelocityCommand:
    v, w = candidate_grid(window, cfg)
    g, colliding, _ = score_candidates(pose, goal, v, w, polygons, cfg, bounds)
    if np.all(colliding):
        return _emergency(window, pose, polygons, cfg)
    k = pick_best(g, w, ~colliding)
    return VelocityCommand(float(v[k]), float(w[k]), float(g[k]))


def _emergency(window: DynamicWindow, pose: Pose, polygons: Sequence[np.ndarray],
               cfg: DwaConfig) -> VelocityCommand:
    """Brake as hard as the window allows and turn at the extreme rate facing more free space."""
    options = []
    for w in (window.w_lo, window.w_hi):
        th = pose.heading + w * cfg.horizon
        probe = np.array([[pose.x + 0.5 * math.cos(th), pose.y + 0.5 * math.sin(th)]])
        free = float(obstacle_distance(probe, polygons)[0]) if polygons else math.inf
        options.append((free, -abs(w), w))
    options.sort(reverse=True)
    return VelocityCommand(window.v_lo, options[0][2], float("nan"), emergency=True)


def command_to_control(velocity: np.ndarray, heading: float, cmd: VelocityCommand,
                       dt: float) -> tuple[np.ndarray, float]:
    """Acceleration that turns the holonomic agent onto the commanded arc in one step.

    Returns the control and the heading the agent ends up with.
    """
    new_heading = heading + cmd.omega * dt
    new_heading = (new_heading + math.pi) % (2 * math.pi) - math.pi
    target = cmd.v * np.array([math.cos(new_heading), math.sin(new_heading)])
    return (target - np.asarray(velocity, dtype=float)) / dt, new_heading
