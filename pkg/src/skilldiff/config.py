"""Experiment configuration as nested dataclasses with strict JSON parsing.

Defaults reproduce the reference hyperparameters: skill length 10, latent
size 32, 5x128 MLPs, 50 denoising steps with a linear variance schedule,
guidance weight 0.5, regularizers 5e-4/1e-4, pretraining 1e5 steps at batch
128 / lr 1e-3, online RL 3e5 steps at batch 64 / lr 3e-4, behavior cloning at
lr 1e-4.  Unknown keys are rejected on parse.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List

from .errors import ParameterError


@dataclass
class EnvConfig:
    families: List[str] = field(default_factory=lambda: ["speed"])
    levels: List[int] = field(default_factory=lambda: [0, 1, 2, 3])
    trajectories_per_domain: int = 20
    fewshot_pool: int = 20
    heldout_per_source: int = 2


@dataclass
class DataConfig:
    horizon: int = 10


@dataclass
class ModelConfig:
    latent_dim: int = 32
    hidden_layers: int = 5
    hidden_size: int = 128
    k_embed_dim: int = 16
    diffusion_steps: int = 50
    beta_min: float = 1e-4
    beta_max: float = 0.02
    delta: float = 0.5
    beta_rho: float = 5e-4
    beta_sigma: float = 1e-4
    beta_vae: float = 5e-4


@dataclass
class TrainConfig:
    steps: int = 100_000
    batch_size: int = 128
    lr: float = 1e-3
    bc_lr: float = 1e-4
    log_interval: int = 100


@dataclass
class FewshotConfig:
    demos: int = 3
    steps: int = 300
    lr: float = 1e-3
    batch_size: int = 64
    eval_episodes: int = 10


@dataclass
class RLConfig:
    env_steps: int = 300_000
    lr: float = 3e-4
    batch_size: int = 64
    discount: float = 0.99
    tau: float = 5e-3
    target_kl: float = 5.0
    replay_capacity: int = 100_000
    updates_per_decision: int = 4
    warmup_transitions: int = 20
    eval_every: int = 5000
    eval_episodes: int = 10
    warmstart_steps: int = 150


@dataclass
class ExperimentConfig:
    variant: str = "dual"
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2])
    out_dir: str = "runs"
    env: EnvConfig = field(default_factory=EnvConfig)
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    fewshot: FewshotConfig = field(default_factory=FewshotConfig)
    rl: RLConfig = field(default_factory=RLConfig)

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    @staticmethod
    def from_json(d: dict) -> "ExperimentConfig":
        return _parse_dataclass(ExperimentConfig, d, path="config")


def _parse_dataclass(cls, d: dict, path: str):
    if not isinstance(d, dict):
        raise ParameterError(f"{path}: expected an object, got {type(d).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(d) - set(fields)
    if unknown:
        raise ParameterError(f"{path}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, f in fields.items():
        if name not in d:
            continue
        value = d[name]
        if dataclasses.is_dataclass(f.type) or (isinstance(f.type, str) and
                                                f.type in _SUBCONFIGS):
            sub_cls = _SUBCONFIGS[f.type] if isinstance(f.type, str) else f.type
            kwargs[name] = _parse_dataclass(sub_cls, value, f"{path}.{name}")
        else:
            kwargs[name] = value
    return cls(**kwargs)


_SUBCONFIGS = {c.__name__: c for c in
               (EnvConfig, DataConfig, ModelConfig, TrainConfig, FewshotConfig, RLConfig)}


def load_config(path: str | Path) -> ExperimentConfig:
    with open(path) as f:
        return ExperimentConfig.from_json(json.load(f))


def save_config(cfg: ExperimentConfig, path: str | Path) -> None:
    with open(path, "w") as f:
        json.dump(cfg.to_json(), f, indent=2, sort_keys=True)
