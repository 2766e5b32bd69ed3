"""One structured configuration covering every module.

The YAML file mirrors :class:`ExperimentConfig`: one top-level mapping per
section (``arena``, ``sensors``, ``pfsm``, ``features``, ``ppo``, ``reward``,
``dwa``, ``harness``), each holding that section's dataclass fields. Missing
keys keep their defaults; unknown keys are an error. Angles are in radians.
See ``configs/default.yaml`` for an annotated example.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .arena import ArenaConfig, SensorSpec
from .featnet import FeatureConfig
from .nav import DwaConfig
from .pfsm import PfsmSpec
from .ppo import PpoConfig, RewardConfig

POLICIES = ("PFSM-DRL", "PFSM-RL", "FSM", "IfElse")


@dataclass
class HarnessConfig:
    jitter_window: int = 10
    deadlock_dwell: int = 100
    cooperate_radius: float = 6.0
    # seconds of disadvantage a tracker tolerates in the goal oracle
    commit_margin: float = 0.0
    # seconds of disadvantage at which the oracle still starts an engagement
    engage_margin: float = 0.0
    turn_rate: float = 2.0
    spawn_depth: float = 4.0
    spawn_margin: float = 1.0
    spawn_separation: float = 0.8
    lead_time: float = 0.5
    escape_radius: float = 3.0
    # fraction of the best refuge's threat distance a regrouping path must keep
    regroup_safety: float = 0.8
    waypoint_tolerance: float = 1.0
    # ticks a teammate's sighting stays worth heading to while searching
    intel_horizon: int = 100
    team_sizes: list = field(default_factory=lambda: [3, 5, 10])
    red_policies: list = field(default_factory=lambda: list(POLICIES))
    blue_policy: str = "FSM"
    eval_games: int = 50
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    # evaluation worker processes; 0 means one per CPU
    workers: int = 1
    # scripted two-on-one encounter: poses [x, y, heading] and a per-seed position jitter (m)
    scenario_red: list = field(default_factory=lambda: [[4.0, 6.5, 0.0], [4.0, 8.5, 0.0]])
    scenario_blue: list = field(default_factory=lambda: [[18.0, 7.5, math.pi]])
    scenario_jitter: float = 0.5

    def __post_init__(self) -> None:
        if min(self.team_sizes) < 1:
            raise ValueError("team sizes must be >= 1")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")
        if self.workers < 0:
            raise ValueError("workers must be >= 0")
        for p in [*self.red_policies, self.blue_policy]:
            if p not in POLICIES:
                raise ValueError(f"unknown policy {p!r}; choose from {POLICIES}")


@dataclass
class ExperimentConfig:
    arena: ArenaConfig = field(default_factory=ArenaConfig)
    sensors: SensorSpec = field(default_factory=SensorSpec)
    pfsm: PfsmSpec = field(default_factory=PfsmSpec)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    dwa: DwaConfig = field(default_factory=DwaConfig)
    harness: HarnessConfig = field(default_factory=HarnessConfig)

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            section = getattr(self, f.name)
            out[f.name] = {sf.name: _plain(getattr(section, sf.name))
                           for sf in dataclasses.fields(section)
                           if not (f.name == "pfsm" and sf.name in ("states", "action_table"))}
        return out

    def replace(self, **sections: dict) -> "ExperimentConfig":
        """Copy with some section fields overridden, e.g. ``replace(ppo={"epochs": 2})``."""
        data = self.to_dict()
        for name, values in sections.items():
            data[name].update(values)
        return from_dict(data)


def _plain(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, float) and math.isinf(value):
        return str(value)
    return value


_SECTIONS = {
    "arena": ArenaConfig,
    "sensors": SensorSpec,
    "pfsm": PfsmSpec,
    "features": FeatureConfig,
    "ppo": PpoConfig,
    "reward": RewardConfig,
    "dwa": DwaConfig,
    "harness": HarnessConfig,
}


def from_dict(data: dict | None) -> ExperimentConfig:
    data = data or {}
    unknown = set(data) - set(_SECTIONS)
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    sections = {}
    for name, cls in _SECTIONS.items():
        values = dict(data.get(name) or {})
        allowed = {f.name for f in dataclasses.fields(cls)}
        bad = set(values) - allowed
        if bad:
            raise ValueError(f"unknown keys in [{name}]: {sorted(bad)}")
        sections[name] = cls(**values)
    # keep cross-section constants consistent
    arena, sensors, feats, dwa = sections["arena"], sections["sensors"], sections["features"], sections["dwa"]
    if dwa.v_max != arena.v_max or dwa.dt != arena.dt:
        sections["dwa"] = dataclasses.replace(dwa, v_max=arena.v_max, dt=arena.dt)
    if sections["ppo"].max_steps != arena.max_ticks:
        sections["ppo"] = dataclasses.replace(sections["ppo"], max_steps=arena.max_ticks)
    if (feats.r_d, feats.max_missiles, feats.max_ticks) != (sensors.r_d, arena.missiles, arena.max_ticks):
        sections["features"] = dataclasses.replace(
            feats, r_d=sensors.r_d, max_missiles=arena.missiles, max_ticks=arena.max_ticks)
    return ExperimentConfig(**sections)


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return from_dict({})
    with open(path) as fh:
        return from_dict(yaml.safe_load(fh))


def dump_config(cfg: ExperimentConfig, path: str | Path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=False)
