"""Skill-window segmentation, normalization and dataset splits.

Trajectories are cut into overlapping stride-1 windows of ``h`` state/action
pairs.  Each window carries the trajectory's domain encoding (one-hot family
concatenated with the 4 stage parameters -> 7 features), its first state (the
prior's conditioning input) and two integer labels used for embedding
analysis: the active goal id at the window start (task label) and the index
of the originating domain cell (domain label).

Normalization statistics are fit on source-training data only and reused
unchanged everywhere downstream.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from .env.arena import FAMILIES, N_STAGES, STATE_DIM
from .env.datagen import Trajectory, TrajectorySet
from .errors import ParameterError
from .seeding import rng_for

log = logging.getLogger(__name__)

OMEGA_DIM = len(FAMILIES) + N_STAGES  # one-hot family + per-stage params
DEFAULT_HORIZON = 10
STD_FLOOR = 1e-6
_SEG_MAGIC = b"SSEG"
_SEG_VERSION = 1


def encode_omega(family: str, stage_params) -> np.ndarray:
    onehot = np.zeros(len(FAMILIES))
    onehot[FAMILIES.index(family)] = 1.0
    return np.concatenate([onehot, np.asarray(stage_params, dtype=np.float64)])


def active_goal_id(flat_state: np.ndarray, order_ids) -> int:
    """Goal id the agent is working toward in a flattened state."""
    flags = flat_state[4:4 + N_STAGES] > 0.5
    undone = np.flatnonzero(~flags)
    stage = int(undone[0]) if undone.size else N_STAGES - 1
    return int(order_ids[stage])


@dataclass
class SegmentSet:
    """Column store of skill windows; raw (unnormalized) units."""

    h: int
    states: np.ndarray        # [N, h, S] f32
    actions: np.ndarray       # [N, h, A] f32
    omega: np.ndarray         # [N, 7]    f32
    first_state: np.ndarray   # [N, S]    f32
    task_label: np.ndarray    # [N] i32: active goal id at window start
    domain_label: np.ndarray  # [N] i32: index into domain_names
    domain_names: List[str]
    n_skipped: int = 0

    def __len__(self) -> int:
        return self.states.shape[0]


def segment(trajs: List[Trajectory], h: int = DEFAULT_HORIZON) -> SegmentSet:
    """Stride-1 sliding windows over every trajectory of length >= h.

    Shorter trajectories are skipped; the skip count is reported on the
    returned set and logged.
    """
    if h < 1:
        raise ParameterError(f"window length h must be >= 1, got {h}")
    states, actions, omegas, firsts, tasks, domains = [], [], [], [], [], []
    names: List[str] = []
    keys: Dict[tuple, int] = {}
    skipped = 0
    for traj in trajs:
        n = len(traj)
        if n < h:
            skipped += 1
            continue
        key = (traj.domain.family, traj.domain.stage_params, traj.order.ids)
        if key not in keys:
            keys[key] = len(names)
            names.append(f"{traj.domain.family}:{traj.order.name}:"
                         + "-".join(f"{p:g}" for p in traj.domain.stage_params))
        dom_idx = keys[key]
        om = encode_omega(traj.domain.family, traj.domain.stage_params)
        for t in range(n - h + 1):
            states.append(traj.states[t:t + h])
            actions.append(traj.actions[t:t + h])
            omegas.append(om)
            firsts.append(traj.states[t])
            tasks.append(active_goal_id(traj.states[t], traj.order.ids))
            domains.append(dom_idx)
    if skipped:
        log.warning("segment: skipped %d trajectories shorter than h=%d", skipped, h)
    if not states:
        raise ParameterError("no trajectory long enough to segment")
    return SegmentSet(
        h=h,
        states=np.asarray(states, dtype=np.float32),
        actions=np.asarray(actions, dtype=np.float32),
        omega=np.asarray(omegas, dtype=np.float32),
        first_state=np.asarray(firsts, dtype=np.float32),
        task_label=np.asarray(tasks, dtype=np.int32),
        domain_label=np.asarray(domains, dtype=np.int32),
        domain_names=names,
        n_skipped=skipped,
    )


@dataclass
class NormStats:
    """Per-dimension state standardization and action min/max scaling."""

    state_mean: np.ndarray
    state_std: np.ndarray
    action_min: np.ndarray
    action_max: np.ndarray

    def norm_state(self, x: np.ndarray) -> np.ndarray:
        return (x - self.state_mean) / self.state_std

    def denorm_state(self, x: np.ndarray) -> np.ndarray:
        return x * self.state_std + self.state_mean

    def norm_action(self, a: np.ndarray) -> np.ndarray:
        return 2.0 * (a - self.action_min) / (self.action_max - self.action_min) - 1.0

    def denorm_action(self, a: np.ndarray) -> np.ndarray:
        return (a + 1.0) * (self.action_max - self.action_min) / 2.0 + self.action_min

    def to_json(self) -> dict:
        return {"state_mean": self.state_mean.tolist(), "state_std": self.state_std.tolist(),
                "action_min": self.action_min.tolist(), "action_max": self.action_max.tolist()}

    @staticmethod
    def from_json(d: dict) -> "NormStats":
        return NormStats(*[np.asarray(d[k], dtype=np.float64) for k in
                           ("state_mean", "state_std", "action_min", "action_max")])


def fit_norm(trajs: List[Trajectory]) -> NormStats:
    """Statistics over all states/actions of the given trajectories.

    State std is floored at 1e-6; constant action dimensions are widened by
    an epsilon (with a warning) so the [-1, 1] mapping stays invertible.
    """
    if not trajs:
        raise ParameterError("fit_norm needs at least one trajectory")
    all_states = np.concatenate([t.states for t in trajs])
    all_actions = np.concatenate([t.actions for t in trajs])
    mean = all_states.mean(axis=0)
    std = np.maximum(all_states.std(axis=0), STD_FLOOR)
    amin = all_actions.min(axis=0)
    amax = all_actions.max(axis=0)
    flat = amax - amin < STD_FLOOR
    if flat.any():
        log.warning("fit_norm: widening %d constant action dimension(s)", int(flat.sum()))
        amin = np.where(flat, amin - STD_FLOOR, amin)
        amax = np.where(flat, amax + STD_FLOOR, amax)
    return NormStats(mean, std, amin, amax)


@dataclass
class DataSplit:
    source_train: List[Trajectory]
    fewshot: Dict[str, List[Trajectory]]   # target cell name -> k demos
    heldout_eval: List[Trajectory]
    fewshot_k: int = 3


def split(ts: TrajectorySet, fewshot_k: int = 3, heldout_per_source: int = 2,
          seed: int = 0) -> DataSplit:
    """Deterministic split: per-cell shuffles keyed by (seed, cell name).

    Target demos come only from target cells, so the few-shot sets can never
    overlap source training data.
    """
    if fewshot_k < 0:
        raise ParameterError("fewshot_k must be >= 0")
    source_train, heldout = [], []
    for cell in ts.source_cells:
        trajs = list(ts.trajectories[cell.name])
        if heldout_per_source >= len(trajs):
            raise ParameterError(
                f"heldout_per_source={heldout_per_source} >= cell size {len(trajs)}")
        perm = rng_for(seed, "split", cell.name).permutation(len(trajs))
        keep = perm[:len(trajs) - heldout_per_source]
        drop = perm[len(trajs) - heldout_per_source:]
        source_train.extend(trajs[i] for i in sorted(keep))
        heldout.extend(trajs[i] for i in sorted(drop))
    fewshot: Dict[str, List[Trajectory]] = {}
    for cell in ts.target_cells:
        pool = list(ts.trajectories[cell.name])
        if fewshot_k > len(pool):
            raise ParameterError(
                f"requested {fewshot_k} few-shot trajectories but cell "
                f"{cell.name} collected only {len(pool)}")
        perm = rng_for(seed, "fewshot", cell.name).permutation(len(pool))
        fewshot[cell.name] = [pool[i] for i in perm[:fewshot_k]]
    return DataSplit(source_train, fewshot, heldout, fewshot_k)


def save_segments(seg: SegmentSet, path: str | Path) -> None:
    """Binary blob: fixed header, JSON legend, then little-endian f32 arrays
    in a fixed order (states, actions, omega, first_state, task, domain)."""
    arrays = [seg.states, seg.actions, seg.omega, seg.first_state,
              seg.task_label.astype(np.float32), seg.domain_label.astype(np.float32)]
    legend = json.dumps({"domain_names": seg.domain_names,
                         "n_skipped": seg.n_skipped}).encode()
    with open(path, "wb") as f:
        f.write(_SEG_MAGIC)
        f.write(struct.pack("<IIIIIQ", _SEG_VERSION, seg.h, seg.states.shape[2],
                            seg.actions.shape[2], seg.omega.shape[1], len(seg)))
        f.write(struct.pack("<I", len(legend)))
        f.write(legend)
        for arr in arrays:
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_segments(path: str | Path) -> SegmentSet:
    with open(path, "rb") as f:
        if f.read(4) != _SEG_MAGIC:
            raise ParameterError(f"{path} is not a segment file")
        version, h, sdim, adim, odim, count = struct.unpack("<IIIIIQ", f.read(28))
        if version != _SEG_VERSION:
            raise ParameterError(f"unsupported segment file version {version}")
        legend = json.loads(f.read(struct.unpack("<I", f.read(4))[0]))

        def arr(*shape):
            n = int(np.prod(shape))
            return np.frombuffer(f.read(4 * n), dtype="<f4").reshape(shape).copy()

        states = arr(count, h, sdim)
        actions = arr(count, h, adim)
        omega = arr(count, odim)
        first = arr(count, sdim)
        task = arr(count).astype(np.int32)
        domain = arr(count).astype(np.int32)
    return SegmentSet(h=h, states=states, actions=actions, omega=omega,
                      first_state=first, task_label=task, domain_label=domain,
                      domain_names=legend["domain_names"], n_skipped=legend["n_skipped"])
