import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from shapely.geometry import LineString, Point, Polygon

from pfsm_swarm.arena import (AgentState, ArenaConfig, FireCommand, InvalidControlError, Outcome,
                              SensorSpec, Team, World, check_termination, in_attack_sector,
                              in_perception, obstacle_distance, point_in_polygon,
                              relative_geometry, resolve_missiles, segment_blocked, step_dynamics)

SENS = SensorSpec()


def agent(i=0, team=Team.RED, p=(0.0, 0.0), v=(0.0, 0.0), **kw):
    return AgentState(id=i, team=team, position=np.array(p, float), velocity=np.array(v, float), **kw)


# ---------------------------------------------------------------- dynamics

def test_zero_acceleration_step():
    s = step_dynamics(agent(v=(1, 0)), [0, 0], 0.1)
    np.testing.assert_allclose(s.position, [0.1, 0.0])
    np.testing.assert_allclose(s.velocity, [1.0, 0.0])


def test_symplectic_euler_step():
    s = step_dynamics(agent(v=(1, 0)), [0, 1], 0.1)
    np.testing.assert_allclose(s.velocity, [1.0, 0.1])
    np.testing.assert_allclose(s.position, [0.1, 0.01])


def test_velocity_clamped():
    s = step_dynamics(agent(v=(1.5, 0)), [10, 0], 0.1)
    assert s.speed == pytest.approx(1.5)


@pytest.mark.parametrize("u", [[math.nan, 0.0], [0.0, math.inf], [1.0]])
def test_non_finite_control_rejected(u):
    with pytest.raises(InvalidControlError):
        step_dynamics(agent(), u, 0.1)


def test_dead_agent_does_not_move():
    a = agent(v=(1, 0), alive=False)
    s = step_dynamics(a, [1, 1], 0.1)
    np.testing.assert_array_equal(s.position, a.position)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(-50, 50), st.floats(-50, 50)), min_size=1, max_size=40))
def test_speed_never_exceeds_vmax(controls):
    arena = ArenaConfig()
    s = agent(p=(5.0, 5.0))
    for u in controls:
        s = step_dynamics(s, u, arena.dt, arena)
        assert s.speed <= arena.v_max + 1e-9
        assert 0 <= s.position[0] <= arena.width and 0 <= s.position[1] <= arena.height
        assert obstacle_distance(s.position[None], arena.polygons)[0] >= 0
        assert not any(point_in_polygon(s.position, poly) for poly in arena.polygons)


def test_energy_constant_without_control():
    s = agent(v=(0.3, 0.4))
    for _ in range(100):
        s = step_dynamics(s, [0, 0], 0.1)
    assert s.speed == pytest.approx(0.5, abs=1e-12)


def test_obstacle_slide_keeps_agent_outside():
    arena = ArenaConfig()
    s = agent(p=(9.9, 4.5), v=(1.5, 0.0))
    for _ in range(20):
        s = step_dynamics(s, [0, 0], arena.dt, arena)
        assert not point_in_polygon(s.position, arena.polygons[0])


# ---------------------------------------------------------------- geometry

def test_relative_geometry_345():
    g = relative_geometry(agent(v=(1, 0)), agent(1, p=(3, 4)))
    assert g.distance == pytest.approx(5.0)
    assert g.angle == pytest.approx(math.acos(0.6))


def test_relative_geometry_aligned_and_behind():
    assert relative_geometry(agent(v=(1, 0)), agent(1, p=(1, 0))).angle == pytest.approx(0.0)
    assert relative_geometry(agent(v=(1, 0)), agent(1, p=(-1, 0))).angle == pytest.approx(math.pi)


def test_zero_velocity_angle_is_pi():
    assert relative_geometry(agent(), agent(1, p=(1, 0))).angle == math.pi


@pytest.mark.parametrize("d,expected", [(1.9, True), (2.1, False), (2.0, True)])
def test_perception_range(d, expected):
    assert in_perception(agent(v=(1, 0)), agent(1, Team.BLUE, p=(0, d)), SENS) is expected


def test_attack_sector_examples():
    me = agent(v=(1, 0))
    assert in_attack_sector(me, agent(1, Team.BLUE, p=(1, 0)), SENS)
    off = (math.cos(math.radians(45)), math.sin(math.radians(45)))
    assert not in_attack_sector(me, agent(1, Team.BLUE, p=off), SENS)
    assert not in_attack_sector(me, agent(1, Team.BLUE, p=(1.6, 0)), SENS)
    assert not in_attack_sector(agent(), agent(1, Team.BLUE, p=(1, 0)), SENS)


def test_predicates_match_set_definition_on_grid():
    me = agent(v=(0.6, 0.8))
    heading = math.atan2(0.8, 0.6)
    xs = np.linspace(-3, 3, 100)
    for x in xs:
        for y in xs:
            other = agent(1, Team.BLUE, p=(x, y))
            d = math.hypot(x, y)
            bearing = math.atan2(y, x)
            off = abs((bearing - heading + math.pi) % (2 * math.pi) - math.pi)
            assert in_perception(me, other, SENS) == (d <= SENS.r_d)
            if abs(off - SENS.theta_s / 2) > 1e-9 and abs(d - SENS.r_s) > 1e-9:
                expected = d <= SENS.r_s and (d == 0 or off <= SENS.theta_s / 2)
                assert in_attack_sector(me, other, SENS) == expected


def test_sensor_spec_validation():
    with pytest.raises(ValueError):
        SensorSpec(r_d=1.0, r_s=1.5)


# ---------------------------------------------------------------- obstacles vs shapely

square = np.array([[0.0, 0.0], [2.0, 0.0], [2.0, 1.0], [0.0, 1.0]])
coords = st.floats(-2.0, 4.0, allow_nan=False)


@settings(max_examples=300, deadline=None)
@given(coords, coords)
def test_obstacle_distance_matches_shapely(x, y):
    d = obstacle_distance(np.array([[x, y]]), [square])[0]
    poly = Polygon(square)
    expected = 0.0 if poly.contains(Point(x, y)) else poly.exterior.distance(Point(x, y))
    assert d == pytest.approx(expected, abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(coords, coords, st.floats(0.05, 2.0))
def test_obstacle_cutoff_is_lossless_below_cutoff(x, y, cutoff):
    full = obstacle_distance(np.array([[x, y]]), [square])[0]
    cut = obstacle_distance(np.array([[x, y]]), [square], cutoff)[0]
    if full < cutoff:
        assert cut == pytest.approx(full)
    else:
        assert cut >= cutoff


# eighth-grid coordinates keep edge-on and vertex-touching cases exactly representable
grid = st.integers(-16, 32).map(lambda k: k / 8)


@settings(max_examples=500, deadline=None)
@given(grid, grid, grid, grid)
def test_segment_blocked_matches_shapely(ax, ay, bx, by):
    poly = Polygon(square)
    if (ax, ay) == (bx, by):
        expected = poly.contains(Point(ax, ay))
    else:
        # interiors meet: edge-grazing segments do not block
        expected = LineString([(ax, ay), (bx, by)]).relate_pattern(poly, "T********")
    assert segment_blocked(np.array([ax, ay]), np.array([bx, by]), [square]) == expected


def test_arena_rejects_overlapping_obstacles():
    with pytest.raises(ValueError):
        ArenaConfig(obstacles=[[[1, 1], [3, 1], [3, 3], [1, 3]], [[2, 2], [4, 2], [4, 4], [2, 4]]])


def test_arena_rejects_nonconvex_obstacle():
    with pytest.raises(ValueError):
        ArenaConfig(obstacles=[[[1, 1], [4, 1], [2, 2], [4, 4], [1, 4]]])


# ---------------------------------------------------------------- missiles and termination

def duel(red_v=(1.0, 0.0), blue_p=(1.0, 0.0), blue_v=(0.0, 0.0)):
    red = agent(0, Team.RED, p=(5.0, 7.0), v=red_v)
    blue = agent(1, Team.BLUE, p=(5.0 + blue_p[0], 7.0 + blue_p[1]), v=blue_v)
    return World(ArenaConfig(obstacles=[]), SENS, [red, blue])


def test_fire_in_sector_kills_and_spends_missile():
    w = duel()
    events = resolve_missiles(w, [FireCommand(0, 1)])
    assert len(events) == 1
    assert not w.agent(1).alive
    assert w.agent(0).missiles == 1
    assert w.agent(0).cooldown == w.config.missile_cooldown


def test_fire_out_of_sector_ignored():
    w = duel(blue_p=(0.0, 1.0))
    assert resolve_missiles(w, [FireCommand(0, 1)]) == []
    assert w.agent(1).alive and w.rejected_fires == 1


def test_fire_without_missiles_ignored():
    w = duel()
    w.agent(0).missiles = 0
    assert resolve_missiles(w, [FireCommand(0, 1)]) == []
    assert w.agent(1).alive


def test_mutual_fire_kills_both():
    w = duel(blue_v=(-1.0, 0.0))
    events = resolve_missiles(w, [FireCommand(0, 1), FireCommand(1, 0)])
    assert len(events) == 2
    assert not w.agent(0).alive and not w.agent(1).alive
    assert check_termination(w) is Outcome.DRAW


def test_line_of_sight_blocks_fire():
    arena = ArenaConfig(obstacles=[[[5.4, 6.0], [5.6, 6.0], [5.6, 8.0], [5.4, 8.0]]])
    red = agent(0, Team.RED, p=(5.0, 7.0), v=(1.0, 0.0))
    blue = agent(1, Team.BLUE, p=(6.0, 7.0))
    w = World(arena, SENS, [red, blue])
    assert resolve_missiles(w, [FireCommand(0, 1)]) == []


def test_dead_agents_not_perceived():
    w = duel()
    w.agent(1).alive = False
    assert w.perceived_by(w.agent(0)) == []


def test_termination_rules():
    w = duel()
    assert check_termination(w) is Outcome.ONGOING
    w.agent(1).alive = False
    assert check_termination(w) is Outcome.RED_WIN
    w = duel()
    w.agent(0).alive = False
    assert check_termination(w) is Outcome.BLUE_WIN
    w = duel()
    w.tick = w.config.max_ticks
    assert check_termination(w) is Outcome.DRAW
