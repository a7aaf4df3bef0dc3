"""Expert dataset generation over a multi-domain grid.

Source cells pair six fixed stage orders with parameter patterns drawn from
the mid-range grid {0.4, 0.5, 0.6}.  Target cells use three held-out orders
(each containing diametral legs, which is where tight budgets bind) and
parameter patterns displaced outside the source hull by one grid step per
disparity level: level L mixes 0.4 - 0.1*L and 0.6 + 0.1*L, while level 0
keeps mid-range parameters and only the orders are new.

Every produced trajectory is an expert rollout verified to reach the full
return of 4; anything less aborts generation naming the offending cell.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from ..errors import GenerationError, ParameterError
from ..seeding import derive_seed
from .arena import DomainParam, EnvState, StageOrder, env_reset, env_step
from .expert import expert_action

log = logging.getLogger(__name__)

SOURCE_ORDERS = [
    StageOrder((0, 1, 2, 3)),
    StageOrder((0, 3, 1, 2)),
    StageOrder((3, 0, 1, 2)),
    StageOrder((3, 1, 0, 2)),
    StageOrder((2, 0, 1, 3)),
    StageOrder((2, 1, 0, 3)),
]
# Held out from the source set; all include at least two diametral legs.
TARGET_ORDERS = [
    StageOrder((0, 2, 3, 1)),
    StageOrder((1, 3, 0, 2)),
    StageOrder((2, 0, 3, 1)),
]

SOURCE_PARAM_PATTERNS = [
    (0.5, 0.5, 0.5, 0.5),
    (0.4, 0.6, 0.4, 0.6),
    (0.6, 0.6, 0.4, 0.4),
    (0.6, 0.4, 0.4, 0.4),
    (0.6, 0.6, 0.6, 0.4),
    (0.4, 0.6, 0.6, 0.4),
]

SOURCE_GRID_LO, SOURCE_GRID_HI, GRID_STEP = 0.4, 0.6, 0.1
MAX_LEVEL = 3


def target_param_pattern(level: int, target_idx: int) -> Tuple[float, ...]:
    """Stage parameters for target cell ``target_idx`` at a disparity level."""
    if not 0 <= level <= MAX_LEVEL:
        raise ParameterError(f"level must be in [0, {MAX_LEVEL}], got {level}")
    if level == 0:
        return (0.5, 0.5, 0.5, 0.5)
    lo = round(SOURCE_GRID_LO - GRID_STEP * level, 3)
    hi = round(SOURCE_GRID_HI + GRID_STEP * level, 3)
    patterns = [(hi, lo, hi, lo), (lo, lo, hi, hi), (hi, hi, lo, lo)]
    return patterns[target_idx % len(patterns)]


@dataclass(frozen=True)
class DomainCell:
    """One (family, order, stage-parameter) combination in the grid."""

    name: str
    family: str
    level: int          # -1 for source cells
    order: StageOrder
    stage_params: Tuple[float, float, float, float]
    role: str           # "source" | "target"

    @property
    def domain(self) -> DomainParam:
        return DomainParam(self.family, self.stage_params)

    def to_json(self) -> dict:
        return {"name": self.name, "family": self.family, "level": self.level,
                "order": self.order.to_json(), "stage_params": list(self.stage_params),
                "role": self.role}

    @staticmethod
    def from_json(d: dict) -> "DomainCell":
        return DomainCell(d["name"], d["family"], int(d["level"]),
                          StageOrder.from_json(d["order"]), tuple(d["stage_params"]), d["role"])


def source_cells(families: List[str]) -> List[DomainCell]:
    cells = []
    for fam in families:
        for i, (order, params) in enumerate(zip(SOURCE_ORDERS, SOURCE_PARAM_PATTERNS)):
            cells.append(DomainCell(f"{fam}_src{i}", fam, -1, order, params, "source"))
    return cells


def target_cells(families: List[str], levels: List[int]) -> List[DomainCell]:
    cells = []
    for fam in families:
        for level in levels:
            for i, order in enumerate(TARGET_ORDERS):
                params = target_param_pattern(level, i)
                cells.append(DomainCell(f"{fam}_L{level}_t{i}", fam, level, order, params, "target"))
    return cells


@dataclass
class Trajectory:
    """One episode: flattened states (length L+1), actions and rewards (L)."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    domain: DomainParam
    order: StageOrder
    seed: int

    @property
    def episode_return(self) -> float:
        return float(self.rewards.sum())

    def __len__(self) -> int:
        return len(self.actions)

    def to_json_line(self) -> str:
        return json.dumps({
            "states": self.states.tolist(),
            "actions": self.actions.tolist(),
            "rewards": self.rewards.tolist(),
            "domain": self.domain.to_json(),
            "order": self.order.to_json(),
            "seed": self.seed,
        })

    @staticmethod
    def from_json_line(line: str) -> "Trajectory":
        d = json.loads(line)
        return Trajectory(
            states=np.asarray(d["states"], dtype=np.float64),
            actions=np.asarray(d["actions"], dtype=np.float64),
            rewards=np.asarray(d["rewards"], dtype=np.float64),
            domain=DomainParam.from_json(d["domain"]),
            order=StageOrder.from_json(d["order"]),
            seed=int(d["seed"]),
        )


def rollout_policy(action_fn, domain: DomainParam, order: StageOrder, seed: int) -> Trajectory:
    """Roll a deterministic state->action callable to episode end."""
    state = env_reset(domain, order, seed)
    states, actions, rewards = [state.flatten()], [], []
    done = False
    while not done:
        a = action_fn(state)
        state, r, done = env_step(state, a, domain, order)
        states.append(state.flatten())
        actions.append(np.asarray(a, dtype=np.float64).reshape(2))
        rewards.append(r)
    return Trajectory(np.asarray(states), np.asarray(actions), np.asarray(rewards),
                      domain, order, seed)


def rollout_expert(domain: DomainParam, order: StageOrder, seed: int) -> Trajectory:
    def act(state: EnvState) -> np.ndarray:
        return expert_action(state, domain, order)
    return rollout_policy(act, domain, order, seed)


@dataclass
class TrajectorySet:
    """All trajectories of a generated dataset, grouped by grid cell."""

    cells: List[DomainCell]
    trajectories: Dict[str, List[Trajectory]] = field(default_factory=dict)
    seed: int = 0

    def cell(self, name: str) -> DomainCell:
        for c in self.cells:
            if c.name == name:
                return c
        raise ParameterError(f"unknown cell {name!r}")

    @property
    def source_cells(self) -> List[DomainCell]:
        return [c for c in self.cells if c.role == "source"]

    @property
    def target_cells(self) -> List[DomainCell]:
        return [c for c in self.cells if c.role == "target"]

    def source_trajectories(self) -> List[Trajectory]:
        out: List[Trajectory] = []
        for c in self.source_cells:
            out.extend(self.trajectories[c.name])
        return out


def generate_dataset(families: List[str], levels: List[int],
                     trajectories_per_domain: int, seed: int,
                     fewshot_pool: int = 20) -> TrajectorySet:
    """Roll the expert over the source grid and target cells.

    Source cells get ``trajectories_per_domain`` episodes each; every target
    cell gets ``fewshot_pool`` episodes (the few-shot split is drawn from this
    pool later).  Raises GenerationError naming the cell if the expert misses
    the full return anywhere.
    """
    if trajectories_per_domain < 1:
        raise ParameterError("trajectories_per_domain must be >= 1")
    cells = source_cells(families) + target_cells(families, levels)
    ts = TrajectorySet(cells=cells, seed=seed)
    for cell in cells:
        n = trajectories_per_domain if cell.role == "source" else fewshot_pool
        trajs = []
        for i in range(n):
            traj = rollout_expert(cell.domain, cell.order, derive_seed(seed, cell.name, i))
            if traj.episode_return < 4.0:
                raise GenerationError(
                    f"expert returned {traj.episode_return} < 4 on {cell.role} domain "
                    f"{cell.name} (family={cell.family}, params={cell.stage_params}, "
                    f"order={cell.order.name})")
            trajs.append(traj)
        ts.trajectories[cell.name] = trajs
    log.info("generated %d cells, %d trajectories", len(cells),
             sum(len(v) for v in ts.trajectories.values()))
    return ts


def save_trajectory_set(ts: TrajectorySet, out_dir: str | Path) -> Path:
    """One JSONL file per cell plus a manifest; numbers keep full precision."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"seed": ts.seed, "cells": []}
    for cell in ts.cells:
        fname = f"{cell.name}.jsonl"
        with open(out / fname, "w") as f:
            for traj in ts.trajectories[cell.name]:
                f.write(traj.to_json_line() + "\n")
        entry = cell.to_json()
        entry.update({"file": fname, "n_trajectories": len(ts.trajectories[cell.name])})
        manifest["cells"].append(entry)
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return out


def load_trajectory_set(in_dir: str | Path) -> TrajectorySet:
    src = Path(in_dir)
    with open(src / "manifest.json") as f:
        manifest = json.load(f)
    cells, trajectories = [], {}
    for entry in manifest["cells"]:
        cell = DomainCell.from_json(entry)
        cells.append(cell)
        with open(src / entry["file"]) as f:
            trajectories[cell.name] = [Trajectory.from_json_line(line) for line in f]
    return TrajectorySet(cells=cells, trajectories=trajectories, seed=int(manifest["seed"]))
