"""Re-simulate an episode from its log header and compare line by line."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from ..config import from_dict
from .episode import EpisodeLog, run_episode
from .training import checkpoint_ref, controller_from_description, load_policy


class ReplayError(ValueError):
    pass


@dataclass
class ReplayResult:
    matched: bool
    lines: int
    first_mismatch: int | None = None
    expected: str | None = None
    got: str | None = None


def _model(header: dict, side: str):
    if header[side]["policy"] not in ("PFSM-DRL", "PFSM-RL"):
        return None
    ref = header.get("checkpoint")
    if not ref:
        raise ReplayError(f"{side} policy is learned but the log names no checkpoint")
    if not Path(ref["path"]).exists():
        raise ReplayError(f"checkpoint {ref['path']} not found")
    if checkpoint_ref(ref["path"])["sha256"] != ref["sha256"]:
        raise ReplayError(f"checkpoint {ref['path']} changed since the log was written")
    return load_policy(ref["path"])[2]


def replay(log: EpisodeLog) -> ReplayResult:
    h = log.header
    cfg = from_dict(h["config"])
    red = controller_from_description(h["red"], cfg, _model(h, "red"))
    blue = controller_from_description(h["blue"], cfg, _model(h, "blue"))
    again = run_episode(cfg, red, blue, h["n_red"], h["n_blue"], h["seed"], h.get("checkpoint"),
                        layout=h.get("layout"))
    a, b = log.lines(), again.lines()
    for k, (x, y) in enumerate(zip(a, b)):
        if x != y:
            return ReplayResult(False, len(a), k, x, y)
    if len(a) != len(b):
        k = min(len(a), len(b))
        return ReplayResult(False, len(a), k, a[k] if k < len(a) else None, b[k] if k < len(b) else None)
    return ReplayResult(True, len(a))
