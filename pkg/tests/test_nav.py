import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from shapely.geometry import Point, Polygon

from pfsm_swarm.arena import AgentState, Team, step_dynamics
from pfsm_swarm.nav import (DwaConfig, DynamicWindow, Pose, VelocityCommand, candidate_grid,
                            command_to_control, dynamic_window, score_candidates,
                            select_velocity)

CFG = DwaConfig()
WALL = [np.array([[2.0, -1.0], [2.3, -1.0], [2.3, 1.0], [2.0, 1.0]])]


@pytest.mark.parametrize("v_c,expected", [(1.0, (0.95, 1.05)), (1.5, (1.45, 1.5)), (0.0, (0.0, 0.05))])
def test_window_examples(v_c, expected):
    win = dynamic_window(v_c, 0.0, CFG)
    assert (win.v_lo, win.v_hi) == pytest.approx(expected)
    assert (win.w_lo, win.w_hi) == pytest.approx((-0.2, 0.2))


def test_config_validation():
    for bad in ({"n_v": 1}, {"w_heading": 0, "w_clearance": 0, "w_speed": 0}, {"horizon": 0.05},
                {"w_speed": -1.0}):
        with pytest.raises(ValueError):
            DwaConfig(**bad)


def test_goal_ahead_goes_full_speed_straight():
    cfg = DwaConfig(w_clearance=0.0)
    win = dynamic_window(1.0, 0.0, cfg)
    cmd = select_velocity(win, Pose(0, 0, 0), (10.0, 0.0), [], cfg)
    assert cmd.v == pytest.approx(win.v_hi) and cmd.omega == 0.0


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1.5), st.floats(-2, 2), st.floats(-math.pi, math.pi))
def test_goal_behind_turns_at_window_extreme(v_c, w_c, heading):
    win = dynamic_window(v_c, w_c, CFG)
    behind = (-5 * math.cos(heading), -5 * math.sin(heading))
    cmd = select_velocity(win, Pose(0, 0, heading), behind, [], CFG)
    assert abs(cmd.omega) == pytest.approx(max(abs(win.w_lo), abs(win.w_hi)))


def test_wall_across_path_keeps_clearance():
    win = dynamic_window(1.0, 0.0, CFG)
    cmd = select_velocity(win, Pose(0.8, 0.0, 0.0), (5.0, 0.0), WALL, CFG)
    assert not cmd.emergency
    _, _, clear = score_candidates(Pose(0.8, 0.0, 0.0), (5.0, 0.0), np.array([cmd.v]),
                                   np.array([cmd.omega]), WALL, CFG)
    assert clear[0] > 0


def test_all_colliding_gives_emergency_brake():
    win = dynamic_window(1.5, 0.0, CFG)
    cmd = select_velocity(win, Pose(1.9, 0.0, 0.0), (5.0, 0.0), WALL, CFG)
    assert cmd.emergency and cmd.v == pytest.approx(win.v_lo)
    assert cmd.omega in (win.w_lo, win.w_hi)


# ---------------------------------------------------------------- window conformance

@settings(max_examples=1000, deadline=None)
@given(st.floats(0, 1.5), st.floats(-2, 2), st.floats(-math.pi, math.pi),
       st.floats(0, 6), st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3))
def test_command_inside_window(v_c, w_c, heading, x, y, gx, gy):
    win = dynamic_window(v_c, w_c, CFG)
    cmd = select_velocity(win, Pose(x, y, heading), (gx, gy), WALL, CFG)
    assert win.contains(cmd.v, cmd.omega)
    assert 0.0 <= cmd.v <= CFG.v_max and abs(cmd.omega) <= CFG.w_max


# ---------------------------------------------------------------- brute-force oracle

def oracle(win, pose, goal, polygons, cfg, n_v, n_w):
    """Per-candidate loop with shapely distances and explicit tie rules."""
    shapes = [Polygon(p) for p in polygons]

    def dist(x, y):
        pt = Point(x, y)
        return min((0.0 if s.contains(pt) else s.exterior.distance(pt)) for s in shapes) if shapes else math.inf

    start = dist(pose.x, pose.y)
    limit = min(cfg.agent_radius, start - 1e-9)
    best = None
    for i in range(n_v):
        v = win.v_lo + (win.v_hi - win.v_lo) * i / (n_v - 1)
        for j in range(n_w):
            w = win.w_lo + (win.w_hi - win.w_lo) * j / (n_w - 1)
            x, y, th = pose.x, pose.y, pose.heading
            clear = math.inf
            for _ in range(int(round(cfg.horizon / cfg.dt))):
                th += w * cfg.dt
                x += v * math.cos(th) * cfg.dt
                y += v * math.sin(th) * cfg.dt
                clear = min(clear, dist(x, y))
            if clear < limit:
                continue
            bearing = math.atan2(goal[1] - y, goal[0] - x)
            err = abs((bearing - th + math.pi) % (2 * math.pi) - math.pi)
            # ending on the goal counts as perfectly aligned
            heading = 1.0 if math.hypot(goal[0] - x, goal[1] - y) < 1e-9 else 1 - err / math.pi
            g = (cfg.w_heading * heading + cfg.w_clearance * min(clear, cfg.clearance_cap)
                 / cfg.clearance_cap + cfg.w_speed * v / cfg.v_max)
            key = (g, -abs(w))
            if best is None or g > best[0][0] + 1e-9 or (abs(g - best[0][0]) <= 1e-9 and -abs(w) > best[0][1] + 1e-12):
                best = (key, v, w)
    return best


@settings(max_examples=150, deadline=None)
@given(st.integers(2, 11), st.integers(2, 11), st.floats(0, 1.5), st.floats(-2, 2),
       st.floats(-math.pi, math.pi), st.floats(0, 1.8), st.floats(-1.5, 1.5),
       st.floats(-4, 6), st.floats(-4, 4))
def test_matches_exhaustive_enumeration(n_v, n_w, v_c, w_c, heading, x, y, gx, gy):
    cfg = DwaConfig(n_v=n_v, n_w=n_w)
    win = dynamic_window(v_c, w_c, cfg)
    pose = Pose(x, y, heading)
    cmd = select_velocity(win, pose, (gx, gy), WALL, cfg)
    ref = oracle(win, pose, (gx, gy), WALL, cfg, n_v, n_w)
    if ref is None:
        assert cmd.emergency
    else:
        assert not cmd.emergency
        assert cmd.score == pytest.approx(ref[0][0], abs=1e-9)
        assert abs(cmd.omega) == pytest.approx(abs(ref[2]), abs=1e-9)


# ---------------------------------------------------------------- structural properties

@settings(max_examples=200, deadline=None)
@given(st.integers(0, 4), st.integers(0, 4), st.integers(0, 8), st.integers(0, 8),
       st.floats(-math.pi, math.pi), st.floats(0, 1.8), st.floats(-1.5, 1.5),
       st.floats(-4, 6), st.floats(-4, 4))
def test_enlarging_window_never_lowers_objective(a, b, c, d, heading, x, y, gx, gy):
    # the small window's grid is a subset of the large window's grid
    lo_v, hi_v = sorted((a, b + 5))
    lo_w, hi_w = sorted((c, d + 9))
    big = DynamicWindow(0.0, 1.0, -1.0, 0.8)
    vs = np.linspace(0.0, 1.0, 11)
    ws = np.linspace(-1.0, 0.8, 19)
    hi_v, hi_w = min(hi_v, 10), min(hi_w, 18)
    small = DynamicWindow(vs[lo_v], vs[hi_v], ws[lo_w], ws[hi_w])
    pose = Pose(x, y, heading)
    big_cmd = select_velocity(big, pose, (gx, gy), WALL, DwaConfig(n_v=11, n_w=19))
    small_cmd = select_velocity(small, pose, (gx, gy), WALL,
                                DwaConfig(n_v=hi_v - lo_v + 1, n_w=hi_w - lo_w + 1))
    if not small_cmd.emergency:
        assert big_cmd.score >= small_cmd.score - 1e-9


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1.5), st.floats(-2, 2), st.floats(-math.pi, math.pi),
       st.floats(0.5, 1.9), st.floats(-1.5, 1.5))
def test_clearance_only_objective_maximizes_clearance(v_c, w_c, heading, x, y):
    cfg = DwaConfig(w_heading=0.0, w_speed=0.0, clearance_cap=5.0)
    win = dynamic_window(v_c, w_c, cfg)
    pose = Pose(x, y, heading)
    cmd = select_velocity(win, pose, (0.0, 0.0), WALL, cfg)
    v, w = candidate_grid(win, cfg)
    _, colliding, clear = score_candidates(pose, (0.0, 0.0), v, w, WALL, cfg)
    if not cmd.emergency:
        capped = np.minimum(clear[~colliding], cfg.clearance_cap)
        mine = score_candidates(pose, (0.0, 0.0), np.array([cmd.v]), np.array([cmd.omega]), WALL, cfg)[2]
        assert min(mine[0], cfg.clearance_cap) == pytest.approx(capped.max())


def test_bridge_puts_agent_on_commanded_arc():
    a = AgentState(id=0, team=Team.RED, position=np.zeros(2), velocity=np.array([1.0, 0.0]), heading=0.0)
    cmd = VelocityCommand(1.2, 0.5)
    u, heading = command_to_control(a.velocity, a.heading, cmd, 0.1)
    s = step_dynamics(a, u, 0.1)
    assert s.speed == pytest.approx(1.2)
    assert math.atan2(s.velocity[1], s.velocity[0]) == pytest.approx(heading)
    assert heading == pytest.approx(0.05)
