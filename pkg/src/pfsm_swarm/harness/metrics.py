"""Episode metrics: jitter and deadlock counters, dwell distributions, win rates."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..pfsm import N_STATES


def _runs(seq: Sequence) -> list[tuple[object, int, int]]:
    """Run-length encoding as (value, start, length)."""
    out: list[tuple[object, int, int]] = []
    for t, v in enumerate(seq):
        if out and out[-1][0] == v:
            value, start, n = out[-1]
            out[-1] = (value, start, n + 1)
        else:
            out.append((v, t, 1))
    return out


def jitter_events(seq: Sequence, window: int) -> int:
    """A->B->A patterns where the excursion to B lasts at most ``window`` ticks.

    Overlapping patterns count separately, so T,E,T,E,T holds three events.
    Only equality between entries matters.
    """
    runs = _runs(seq)
    count = 0
    for k in range(len(runs) - 2):
        a, b, c = runs[k], runs[k + 1], runs[k + 2]
        if a[0] == c[0] and b[2] <= window:
            count += 1
    return count


def deadlock_events(states: Sequence, goals: Sequence, dwell: int) -> int:
    """Maximal stretches holding one state while the oracle wants another, of length >= ``dwell``."""
    count = 0
    run_state, run_len = None, 0
    for s, g in zip(states, goals):
        if g is not None and s != g:
            if s == run_state:
                run_len += 1
            else:
                if run_len >= dwell:
                    count += 1
                run_state, run_len = s, 1
        else:
            if run_len >= dwell:
                count += 1
            run_state, run_len = None, 0
    if run_len >= dwell:
        count += 1
    return count


def dwell_fractions(states: Sequence[int], n_states: int = N_STATES) -> np.ndarray | None:
    """Fraction of ticks per state, or None for an agent with no living ticks."""
    if len(states) == 0:
        return None
    counts = np.bincount(np.asarray(states, dtype=int), minlength=n_states).astype(float)
    return counts / counts.sum()


# --------------------------------------------------------------------------
# log-level views


def agent_tracks(log) -> dict[int, dict[str, list]]:
    """Per-agent behavior and goal sequences over the decided, living ticks of a log."""
    tracks: dict[int, dict[str, list]] = {}
    for rec in log.ticks:
        if rec["tick"] == 0:
            continue
        for a in rec["agents"]:
            if not a["decided"]:
                continue
            tr = tracks.setdefault(a["id"], {"team": a["team"], "behavior": [], "goal": []})
            tr["behavior"].append(a["behavior"])
            tr["goal"].append(a["goal"])
    return tracks


def jitter_count(log, window: int, team: str | None = None) -> int:
    return sum(jitter_events(tr["behavior"], window)
               for tr in agent_tracks(log).values() if team is None or tr["team"] == team)


def deadlock_count(log, dwell: int, team: str | None = None) -> int:
    return sum(deadlock_events(tr["behavior"], tr["goal"], dwell)
               for tr in agent_tracks(log).values() if team is None or tr["team"] == team)


@dataclass
class DwellHistogram:
    agent_id: int
    team: str
    fractions: np.ndarray | None
    ticks: int

    @property
    def empty(self) -> bool:
        return self.fractions is None


def state_distribution(log) -> list[DwellHistogram]:
    from ..pfsm import StateId

    index = {s.label: int(s) for s in StateId}
    tracks = agent_tracks(log)
    out = []
    for a in log.header["agents"]:
        tr = tracks.get(a["id"], {"behavior": []})
        seq = [index[b] for b in tr["behavior"]]
        out.append(DwellHistogram(a["id"], a["team"], dwell_fractions(seq), len(seq)))
    return out


# --------------------------------------------------------------------------
# aggregation


@dataclass
class GameResult:
    seed: int
    outcome: str
    ticks: int
    jitter_red: int
    jitter_blue: int
    deadlock_red: int
    deadlock_blue: int
    dwell_red: np.ndarray
    dwell_blue: np.ndarray


def team_dwell(hists: Iterable[DwellHistogram], team: str) -> np.ndarray:
    """Tick-weighted dwell fractions over a team's agents (zeros if nobody lived)."""
    counts = np.zeros(N_STATES)
    for h in hists:
        if h.team == team and not h.empty:
            counts += h.fractions * h.ticks
    return counts / counts.sum() if counts.sum() > 0 else counts


def summarize_game(log, jitter_window: int, deadlock_dwell: int) -> GameResult:
    hists = state_distribution(log)
    return GameResult(
        seed=log.header["seed"],
        outcome=log.result["outcome"],
        ticks=log.result["tick"],
        jitter_red=jitter_count(log, jitter_window, "red"),
        jitter_blue=jitter_count(log, jitter_window, "blue"),
        deadlock_red=deadlock_count(log, deadlock_dwell, "red"),
        deadlock_blue=deadlock_count(log, deadlock_dwell, "blue"),
        dwell_red=team_dwell(hists, "red"),
        dwell_blue=team_dwell(hists, "blue"),
    )


@dataclass
class WinTally:
    wins: int = 0
    losses: int = 0
    draws: int = 0

    def add(self, outcome: str) -> None:
        if outcome == "RedWin":
            self.wins += 1
        elif outcome == "BlueWin":
            self.losses += 1
        else:
            self.draws += 1

    @property
    def games(self) -> int:
        return self.wins + self.losses + self.draws

    @property
    def win_rate(self) -> float:
        """Score per game with a draw worth half a win, so a symmetric matchup sits at 0.5."""
        return (self.wins + 0.5 * self.draws) / self.games if self.games else 0.0

    @property
    def strict_win_rate(self) -> float:
        return self.wins / self.games if self.games else 0.0


@dataclass
class MetricsReport:
    """Training curves plus evaluation statistics for one (policy, team size) cell."""

    policy: str
    team_size: int
    # training curves, one entry per episode
    reward_mean: list = field(default_factory=list)
    reward_std: list = field(default_factory=list)
    win_curve: list = field(default_factory=list)
    win_flag: list = field(default_factory=list)
    jitter: list = field(default_factory=list)
    deadlock: list = field(default_factory=list)
    actor_loss: list = field(default_factory=list)
    critic_loss: list = field(default_factory=list)
    games: list = field(default_factory=list)

    CURVES = ("reward_mean", "reward_std", "win_curve", "win_flag", "jitter", "deadlock",
              "actor_loss", "critic_loss")

    def tally(self) -> WinTally:
        t = WinTally()
        for g in self.games:
            t.add(g.outcome)
        return t

    @property
    def win_rate(self) -> float:
        return self.tally().win_rate

    def mean(self, attr: str) -> float:
        return float(np.mean([getattr(g, attr) for g in self.games])) if self.games else 0.0

    def dwell(self, team: str = "red") -> np.ndarray:
        rows = [getattr(g, f"dwell_{team}") for g in self.games]
        rows = [r for r in rows if r.sum() > 0]
        return np.mean(rows, axis=0) if rows else np.zeros(N_STATES)

    def write_csv(self, out_dir: str | Path) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = f"{self.policy}_V{self.team_size}"
        paths = []
        if self.reward_mean:
            p = out / f"{stem}_training.csv"
            cols = [getattr(self, c) for c in self.CURVES]
            _write(p, ["episode", *self.CURVES],
                   [[k, *(_f(v) for v in row)] for k, row in enumerate(zip(*cols))])
            paths.append(p)
        p = out / f"{stem}_games.csv"
        _write(p, ["seed", "outcome", "ticks", "jitter_red", "jitter_blue", "deadlock_red",
                   "deadlock_blue", *[f"dwell_red_{k}" for k in range(N_STATES)]],
               [[g.seed, g.outcome, g.ticks, g.jitter_red, g.jitter_blue, g.deadlock_red,
                 g.deadlock_blue, *[_f(x) for x in g.dwell_red]] for g in self.games])
        paths.append(p)
        return paths


def _f(x: float) -> str:
    return f"{float(x):.10g}"


def _write(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
