"""Jitter, deadlock and dwell counters plus win-rate bookkeeping."""
import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pfsm_swarm.harness.episode import EpisodeLog
from pfsm_swarm.harness.metrics import (GameResult, MetricsReport, WinTally, deadlock_count,
                                        deadlock_events, dwell_fractions, jitter_count,
                                        jitter_events, state_distribution, team_dwell)


# --------------------------------------------------------------------------
# jitter


def test_constant_sequence_has_no_jitter():
    assert jitter_events(["Track"] * 50, window=3) == 0


def test_single_excursion_counts_once():
    assert jitter_events(["Track", "Escape", "Track"], window=3) == 1


def test_overlapping_excursions_count_separately():
    assert jitter_events(["Track", "Escape", "Track", "Escape", "Track"], window=3) == 3


def test_excursion_longer_than_window_is_not_jitter():
    seq = ["Track"] + ["Escape"] * 4 + ["Track"]
    assert jitter_events(seq, window=3) == 0
    assert jitter_events(seq, window=4) == 1


def test_a_b_c_is_not_jitter():
    assert jitter_events(["Search", "Track", "Escape"], window=3) == 0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 4), max_size=60), st.permutations(range(5)),
       st.integers(1, 6))
def test_jitter_invariant_under_relabeling(seq, perm, window):
    assert jitter_events(seq, window) == jitter_events([perm[s] for s in seq], window)


# --------------------------------------------------------------------------
# deadlock


def test_search_with_search_goal_is_no_deadlock():
    assert deadlock_events(["Search"] * 300, ["Search"] * 300, dwell=100) == 0


def test_search_held_while_oracle_wants_track():
    assert deadlock_events(["Search"] * 100, ["Track"] * 100, dwell=100) == 1
    assert deadlock_events(["Search"] * 99, ["Track"] * 99, dwell=100) == 0


def test_deadlock_empty_and_missing_goal():
    assert deadlock_events([], [], dwell=5) == 0
    assert deadlock_events(["Search"] * 10, [None] * 10, dwell=5) == 0


def test_deadlock_stretch_is_maximal():
    states = ["Search"] * 12 + ["Track"] * 3 + ["Search"] * 12
    goals = ["Track"] * 12 + ["Track"] * 3 + ["Track"] * 12
    # the Track ticks agree with the goal and split the stretch in two
    assert deadlock_events(states, goals, dwell=10) == 2
    assert deadlock_events(states, goals, dwell=13) == 0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2)), max_size=80),
       st.integers(1, 10))
def test_deadlock_bounded_by_disagreeing_ticks(pairs, dwell):
    states = [s for s, _ in pairs]
    goals = [g for _, g in pairs]
    disagree = sum(s != g for s, g in pairs)
    assert 0 <= deadlock_events(states, goals, dwell) <= disagree // dwell


# --------------------------------------------------------------------------
# dwell


def test_dwell_examples():
    np.testing.assert_array_equal(dwell_fractions([0] * 7), [1, 0, 0, 0, 0])
    np.testing.assert_array_equal(dwell_fractions([0, 1, 0, 1]), [0.5, 0.5, 0, 0, 0])
    assert dwell_fractions([]) is None


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=1, max_size=50))
def test_dwell_is_a_distribution(seq):
    f = dwell_fractions(seq)
    assert f.shape == (5,) and np.all(f >= 0)
    assert f.sum() == pytest.approx(1.0, abs=1e-12)


# --------------------------------------------------------------------------
# log-level views


def _synthetic_log(red_states, blue_states, red_goals=None, blue_dead=False):
    header = {"seed": 3, "agents": [{"id": 0, "team": "red"}, {"id": 1, "team": "blue"}]}
    ticks = [{"tick": 0, "agents": [
        {"id": 0, "team": "red", "behavior": "Search", "goal": None, "decided": False},
        {"id": 1, "team": "blue", "behavior": "Search", "goal": None, "decided": False}]}]
    red_goals = red_goals or [None] * len(red_states)
    for t, (r, b, g) in enumerate(zip(red_states, blue_states, red_goals), start=1):
        ticks.append({"tick": t, "agents": [
            {"id": 0, "team": "red", "behavior": r, "goal": g, "decided": True},
            {"id": 1, "team": "blue", "behavior": b, "goal": None, "decided": not blue_dead}]})
    return EpisodeLog(header, ticks, {"outcome": "Draw", "tick": len(red_states)})


def test_log_counters_split_by_team():
    log = _synthetic_log(["Track", "Escape", "Track"], ["Search"] * 3)
    assert jitter_count(log, 3, "red") == 1
    assert jitter_count(log, 3, "blue") == 0
    assert jitter_count(log, 3) == 1


def test_log_deadlock_uses_recorded_goals():
    log = _synthetic_log(["Search"] * 5, ["Search"] * 5, red_goals=["Track"] * 5)
    assert deadlock_count(log, 5, "red") == 1
    assert deadlock_count(log, 6, "red") == 0


def test_agent_dead_at_spawn_has_empty_histogram():
    log = _synthetic_log(["Track", "Track"], ["Search"] * 2, blue_dead=True)
    hists = {h.agent_id: h for h in state_distribution(log)}
    assert hists[1].empty and hists[1].ticks == 0
    np.testing.assert_array_equal(hists[0].fractions, [0, 1, 0, 0, 0])
    # empty histograms do not dilute the team view
    np.testing.assert_array_equal(team_dwell(hists.values(), "blue"), np.zeros(5))


# --------------------------------------------------------------------------
# tallies and reports


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from(["RedWin", "BlueWin", "Draw"]), max_size=60))
def test_win_tally_consistency(outcomes):
    t = WinTally()
    for o in outcomes:
        t.add(o)
    assert t.games == len(outcomes)
    assert (t.wins, t.losses, t.draws) == tuple(outcomes.count(o) for o in
                                                ("RedWin", "BlueWin", "Draw"))
    if outcomes:
        assert 0 <= t.strict_win_rate <= t.win_rate <= 1
        # swapping sides mirrors the score
        mirrored = WinTally(t.losses, t.wins, t.draws)
        assert t.win_rate + mirrored.win_rate == pytest.approx(1.0)


def test_win_rate_counts_draws_half():
    t = WinTally(wins=2, losses=1, draws=1)
    assert t.win_rate == pytest.approx(2.5 / 4)
    assert t.strict_win_rate == pytest.approx(0.5)
    assert WinTally().win_rate == 0.0


def _game(seed, outcome):
    return GameResult(seed, outcome, 10, 1, 2, 0, 1, np.eye(5)[0], np.eye(5)[1])


def test_report_csv(tmp_path):
    rep = MetricsReport("FSM", 3)
    rep.games = [_game(0, "RedWin"), _game(1, "Draw")]
    for name in MetricsReport.CURVES:
        setattr(rep, name, [0.1, 0.2])
    paths = rep.write_csv(tmp_path)
    assert all(p.exists() for p in paths)
    rows = {p.name: list(csv.reader(p.open())) for p in paths}
    training = next(v for k, v in rows.items() if k.endswith("_training.csv"))
    assert training[0] == ["episode", *MetricsReport.CURVES]
    assert len(training) == 3
    assert rep.win_rate == pytest.approx(0.75)
    assert rep.mean("jitter_blue") == 2
    np.testing.assert_array_equal(rep.dwell("red"), np.eye(5)[0])
