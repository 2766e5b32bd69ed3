"""The four-policy by team-size ablation, written out as CSV."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..config import ExperimentConfig
from .metrics import MetricsReport
from .training import LEARNED, checkpoint_ref, evaluate, load_policy, save_policy, train

log = logging.getLogger(__name__)


@dataclass
class CellRun:
    """One (policy, team size, seed) run."""

    policy: str
    team_size: int
    seed: int
    report: MetricsReport
    checkpoint: dict | None = None


@dataclass
class AblationResult:
    runs: list[CellRun] = field(default_factory=list)

    def cell(self, policy: str, team_size: int) -> list[CellRun]:
        return [r for r in self.runs if r.policy == policy and r.team_size == team_size]

    def mean_win_rate(self, policy: str, team_size: int) -> float:
        rates = [r.report.win_rate for r in self.cell(policy, team_size)]
        return float(np.mean(rates)) if rates else float("nan")

    def merged(self, policy: str, team_size: int) -> MetricsReport:
        """All seeds of a cell: games pooled, curves averaged with their spread across seeds."""
        runs = self.cell(policy, team_size)
        out = MetricsReport(policy, team_size)
        for r in runs:
            out.games.extend(r.report.games)
        trained = [r.report for r in runs if r.report.reward_mean]
        if trained:
            n = min(len(r.reward_mean) for r in trained)
            for name in MetricsReport.CURVES:
                rows = np.array([getattr(r, name)[:n] for r in trained])
                setattr(out, name, rows.mean(axis=0).tolist())
            # the spread shown around the reward curve is across seeds
            out.reward_std = np.array([r.reward_mean[:n] for r in trained]).std(axis=0).tolist()
        return out


def checkpoint_path(directory: str | Path, policy: str, team_size: int, seed: int) -> Path:
    return Path(directory) / f"{policy}_V{team_size}_seed{seed}.ckpt"


def ablation(cfg: ExperimentConfig, out_dir: str | Path | None = None, train_missing: bool = True,
             checkpoint_dir: str | Path | None = None, progress=None) -> AblationResult:
    """Train (where applicable) and evaluate every red policy at every team size and seed.

    Learned policies reuse a checkpoint from ``checkpoint_dir`` when present;
    otherwise they are trained if ``train_missing`` is set, and a missing
    checkpoint is an error if not.
    """
    h = cfg.harness
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir else (Path(out_dir) / "checkpoints" if out_dir else None)
    if ckpt_dir:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    result = AblationResult()
    for n in h.team_sizes:
        for policy in h.red_policies:
            for seed in h.seeds:
                model, ref, curve = None, None, None
                if policy in LEARNED:
                    path = checkpoint_path(ckpt_dir, policy, n, seed) if ckpt_dir else None
                    if path is not None and path.exists():
                        _, _, model, _ = load_policy(path)
                    elif train_missing:
                        tr = train(cfg, policy, n, seed)
                        model, curve = tr.model, tr.report
                        if path is not None:
                            save_policy(path, policy, model, cfg, n, seed)
                    else:
                        raise FileNotFoundError(f"no checkpoint for {policy} V{n} seed {seed}"
                                                f" in {ckpt_dir} and training is disabled")
                    if path is not None and path.exists():
                        ref = checkpoint_ref(path)
                report = evaluate(cfg, policy, n, seed, model=model, checkpoint=ref)
                if curve is not None:
                    for name in MetricsReport.CURVES:
                        setattr(report, name, getattr(curve, name))
                result.runs.append(CellRun(policy, n, seed, report, ref))
                log.info("%s V%d seed %d: win rate %.3f", policy, n, seed, report.win_rate)
                if progress:
                    progress(result.runs[-1])
    if out_dir:
        write_ablation(result, out_dir)
    return result


def write_ablation(result: AblationResult, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    cells = sorted({(r.policy, r.team_size) for r in result.runs}, key=lambda c: (c[1], c[0]))
    for policy, n in cells:
        paths += result.merged(policy, n).write_csv(out)
    summary = out / "ablation_summary.csv"
    with open(summary, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["policy", "team_size", "seed", "games", "wins", "losses", "draws", "win_rate",
                    "strict_win_rate", "jitter_red", "deadlock_red"])
        for r in result.runs:
            t = r.report.tally()
            w.writerow([r.policy, r.team_size, r.seed, t.games, t.wins, t.losses, t.draws,
                        f"{t.win_rate:.10g}", f"{t.strict_win_rate:.10g}",
                        f"{r.report.mean('jitter_red'):.10g}",
                        f"{r.report.mean('deadlock_red'):.10g}"])
    paths.append(summary)
    return paths
