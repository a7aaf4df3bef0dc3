"""Experiment orchestration: dataset generation, pretraining, few-shot and
online-RL evaluation, embedding export, and report files.

Reports are JSON with a ``timing`` section carrying wall-clock numbers; the
canonical form used for determinism comparisons strips that section (and
nothing else).  Checkpoints are compared byte-for-byte.
"""

from __future__ import annotations

import json
import logging
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch
from sklearn.metrics import adjusted_rand_score

from . import data as datakit
from .checkpoint import ModelBundle, load_bundle, save_bundle, save_tensor_file
from .config import ExperimentConfig
from .diffusion import build_schedule
from .downstream import (evaluate_policy, fewshot_finetune, make_adapt_policy,
                         init_policy, warmstart)
from .env.arena import ACTION_DIM, STATE_DIM
from .env.datagen import (TrajectorySet, generate_dataset, load_trajectory_set,
                          save_trajectory_set)
from .errors import ParameterError
from .models import LossWeights, ModelDims, build_variant, make_batch
from .rl import run_online
from .seeding import derive_seed, rng_for
from .training import configure_torch_determinism, train_offline

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Paths and report plumbing
# ---------------------------------------------------------------------------

def dataset_dir(cfg: ExperimentConfig) -> Path:
    return Path(cfg.out_dir) / "dataset"


def checkpoint_dir(cfg: ExperimentConfig, variant: str, seed: int) -> Path:
    return Path(cfg.out_dir) / "checkpoints" / f"{variant}_seed{seed}"


def report_path(cfg: ExperimentConfig, kind: str, variant: str, seed: int) -> Path:
    return Path(cfg.out_dir) / "reports" / f"{kind}_{variant}_seed{seed}.json"


def write_report(path: Path, report: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)


def canonical_report(report: dict) -> dict:
    """Report contents minus volatile wall-clock timing."""
    return {k: v for k, v in report.items() if k != "timing"}


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------

def ensure_dataset(cfg: ExperimentConfig, seed: int) -> TrajectorySet:
    """Load the configured dataset, generating and saving it if absent."""
    ddir = dataset_dir(cfg)
    if (ddir / "manifest.json").exists():
        return load_trajectory_set(ddir)
    ts = generate_dataset(cfg.env.families, cfg.env.levels,
                          cfg.env.trajectories_per_domain, seed,
                          fewshot_pool=cfg.env.fewshot_pool)
    save_trajectory_set(ts, ddir)
    return ts


def dataset_split(cfg: ExperimentConfig, ts: TrajectorySet,
                  demos: Optional[int] = None) -> datakit.DataSplit:
    """The deterministic split everyone shares (keyed by the dataset seed)."""
    return datakit.split(ts, fewshot_k=demos if demos is not None else cfg.fewshot.demos,
                         heldout_per_source=cfg.env.heldout_per_source, seed=ts.seed)


# ---------------------------------------------------------------------------
# Pretraining
# ---------------------------------------------------------------------------

def model_dims(cfg: ExperimentConfig) -> ModelDims:
    return ModelDims(state_dim=STATE_DIM, action_dim=ACTION_DIM,
                     omega_dim=datakit.OMEGA_DIM, horizon=cfg.data.horizon,
                     latent_dim=cfg.model.latent_dim,
                     hidden_layers=cfg.model.hidden_layers,
                     hidden_size=cfg.model.hidden_size,
                     k_embed_dim=cfg.model.k_embed_dim)


def loss_weights(cfg: ExperimentConfig) -> LossWeights:
    return LossWeights(beta_rho=cfg.model.beta_rho, beta_sigma=cfg.model.beta_sigma,
                       beta_vae=cfg.model.beta_vae, delta=cfg.model.delta)


def run_pretrain(cfg: ExperimentConfig, seed: int,
                 variant: Optional[str] = None) -> Path:
    """Full offline phase for one (variant, seed); returns the checkpoint dir."""
    configure_torch_determinism()
    variant = variant or cfg.variant
    t0 = time.perf_counter()
    ts = ensure_dataset(cfg, seed=cfg.seeds[0] if cfg.seeds else seed)
    split = dataset_split(cfg, ts)
    segments = datakit.segment(split.source_train, cfg.data.horizon)
    norms = datakit.fit_norm(split.source_train)

    torch.manual_seed(derive_seed(seed, "init", variant))
    model = build_variant(variant, model_dims(cfg))
    sched = build_schedule(cfg.model.diffusion_steps, cfg.model.beta_min, cfg.model.beta_max)
    lr = cfg.train.bc_lr if variant == "bc" else cfg.train.lr

    log_dir = Path(cfg.out_dir) / "logs"
    log_dir.mkdir(parents=True, exist_ok=True)
    loss_log = log_dir / f"pretrain_{variant}_seed{seed}.jsonl"
    with open(loss_log, "w") as f:
        history = train_offline(model, segments, norms, sched, loss_weights(cfg),
                                steps=cfg.train.steps, batch_size=cfg.train.batch_size,
                                lr=lr, seed=seed, log_interval=cfg.train.log_interval,
                                on_report=lambda r: f.write(json.dumps(r.to_json()) + "\n"))
    bundle = ModelBundle(variant=variant, model=model, dims=model_dims(cfg),
                         weights=loss_weights(cfg), norms=norms, sched=sched,
                         steps=cfg.train.steps, config=cfg.to_json()).freeze()
    out = save_bundle(checkpoint_dir(cfg, variant, seed), bundle)
    log.info("pretrained %s seed %d in %.1fs (final rec %.4f)", variant, seed,
             time.perf_counter() - t0, history[-1].rec)
    return out


# ---------------------------------------------------------------------------
# Few-shot evaluation
# ---------------------------------------------------------------------------

def run_fewshot(cfg: ExperimentConfig, ckpt: Path | str, seed: int,
                levels: Optional[Sequence[int]] = None,
                demos: Optional[int] = None) -> dict:
    """Adapt to every target cell at the requested levels and evaluate.

    For each (level, target cell): initialize the policy from the priors (or
    clone the actor for bc), fine-tune on the cell's demo split, then run the
    deterministic evaluation episodes.
    """
    configure_torch_determinism()
    t0 = time.perf_counter()
    bundle = load_bundle(ckpt)
    ts = ensure_dataset(cfg, seed=cfg.seeds[0] if cfg.seeds else seed)
    k = demos if demos is not None else cfg.fewshot.demos
    split = dataset_split(cfg, ts, demos=k)
    levels = list(levels) if levels is not None else list(cfg.env.levels)

    rows = []
    for cell in ts.target_cells:
        if cell.level not in levels:
            continue
        policy = make_adapt_policy(bundle)
        demos_k = split.fewshot[cell.name]
        curve: List[float] = []
        if k > 0:
            policy, curve = fewshot_finetune(
                policy, bundle, demos_k, steps=cfg.fewshot.steps, lr=cfg.fewshot.lr,
                batch_size=cfg.fewshot.batch_size,
                seed=derive_seed(seed, "finetune", cell.name))
        returns = evaluate_policy(bundle, policy, cell.domain, cell.order,
                                  cfg.data.horizon, cfg.fewshot.eval_episodes,
                                  seed=derive_seed(seed, "eval", cell.name))
        rows.append({
            "domain": cell.name, "family": cell.family, "level": cell.level,
            "variant": bundle.variant, "seed": seed, "demos": k,
            "returns": returns, "mean_return": float(np.mean(returns)),
            "finetune_loss_first": curve[0] if curve else None,
            "finetune_loss_last": curve[-1] if curve else None,
        })
        log.info("fewshot %s %s L%d: %.2f", bundle.variant, cell.name, cell.level,
                 rows[-1]["mean_return"])
    report = {
        "kind": "fewshot", "variant": bundle.variant, "seed": seed, "demos": k,
        "levels": levels, "rows": rows,
        "timing": {"wall_clock_s": time.perf_counter() - t0},
    }
    write_report(report_path(cfg, "fewshot" if demos is None else f"fewshot_k{k}",
                             bundle.variant, seed), report)
    return report


def aggregate_metrics(reports: Sequence[dict]) -> List[dict]:
    """MetricsTable rows: mean/std over seeds per (domain, level, variant)."""
    groups: Dict[tuple, List[float]] = {}
    for rep in reports:
        for row in rep["rows"]:
            key = (row["domain"], row["level"], row["variant"])
            groups.setdefault(key, []).append(row["mean_return"])
    table = []
    for (domain, level, variant), vals in sorted(groups.items()):
        table.append({"domain": domain, "level": level, "variant": variant,
                      "mean_return": float(np.mean(vals)),
                      "std_return": float(np.std(vals)), "n_seeds": len(vals)})
    return table


def level_means(report: dict) -> Dict[int, float]:
    """Per-level average of the per-cell mean returns in one few-shot report."""
    by_level: Dict[int, List[float]] = {}
    for row in report["rows"]:
        by_level.setdefault(row["level"], []).append(row["mean_return"])
    return {lvl: float(np.mean(v)) for lvl, v in by_level.items()}


# ---------------------------------------------------------------------------
# Online RL
# ---------------------------------------------------------------------------

def run_rl(cfg: ExperimentConfig, ckpt: Path | str, seed: int,
           level: int = 3, target_index: int = 0,
           env_steps: Optional[int] = None) -> dict:
    """Warm-start from a single demo, then online prior-regularized SAC on one
    target cell; logs an evaluation curve."""
    configure_torch_determinism()
    t0 = time.perf_counter()
    bundle = load_bundle(ckpt)
    ts = ensure_dataset(cfg, seed=cfg.seeds[0] if cfg.seeds else seed)
    split = dataset_split(cfg, ts, demos=max(1, cfg.fewshot.demos))
    cells = [c for c in ts.target_cells if c.level == level]
    if not cells:
        raise ParameterError(f"dataset has no level-{level} target cells")
    cell = cells[target_index % len(cells)]

    policy = init_policy(bundle)
    demo = split.fewshot[cell.name][:1]
    policy, warm_curve = warmstart(policy, bundle, demo,
                                   steps=cfg.rl.warmstart_steps, lr=cfg.fewshot.lr,
                                   batch_size=cfg.fewshot.batch_size,
                                   seed=derive_seed(seed, "warmstart", cell.name))
    policy, result = run_online(
        bundle, policy, cell.domain, cell.order,
        env_steps=env_steps if env_steps is not None else cfg.rl.env_steps,
        lr=cfg.rl.lr, batch_size=cfg.rl.batch_size, discount=cfg.rl.discount,
        tau=cfg.rl.tau, target_kl=cfg.rl.target_kl,
        replay_capacity=cfg.rl.replay_capacity,
        updates_per_decision=cfg.rl.updates_per_decision,
        warmup_transitions=cfg.rl.warmup_transitions,
        eval_every=cfg.rl.eval_every, eval_episodes=cfg.rl.eval_episodes,
        seed=seed, horizon=cfg.data.horizon)

    report = {
        "kind": "rl", "variant": bundle.variant, "seed": seed,
        "domain": cell.name, "level": cell.level,
        "eval_steps": result.eval_steps, "eval_returns": result.eval_returns,
        "train_episode_steps": result.train_episode_steps,
        "train_episode_returns": result.train_episode_returns,
        "updates": result.updates,
        "warmstart_loss_first": warm_curve[0] if warm_curve else None,
        "warmstart_loss_last": warm_curve[-1] if warm_curve else None,
        "timing": {"wall_clock_s": time.perf_counter() - t0},
    }
    write_report(report_path(cfg, "rl", bundle.variant, seed), report)
    return report


# ---------------------------------------------------------------------------
# Embedding export
# ---------------------------------------------------------------------------

def kmeans(x: np.ndarray, k: int, seed: int, iters: int = 100) -> np.ndarray:
    """Deterministic Lloyd k-means (seeded init from data points)."""
    rng = np.random.default_rng(seed)
    centers = x[rng.choice(len(x), size=k, replace=False)].copy()
    labels = np.zeros(len(x), dtype=np.int64)
    for _ in range(iters):
        d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
        new_labels = d2.argmin(1)
        if (new_labels == labels).all() and _ > 0:
            break
        labels = new_labels
        for j in range(k):
            mask = labels == j
            if mask.any():
                centers[j] = x[mask].mean(0)
    return labels


def principal_projection(x: np.ndarray) -> np.ndarray:
    """Top-2 principal directions with a deterministic sign convention."""
    centered = x - x.mean(0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    basis = vt[:2]
    for i in range(basis.shape[0]):
        j = np.argmax(np.abs(basis[i]))
        if basis[i, j] < 0:
            basis[i] = -basis[i]
    return centered @ basis.T


def export_embeddings(cfg: ExperimentConfig, ckpt: Path | str,
                      out_path: Optional[Path | str] = None,
                      cluster_k: int = 2, batch: int = 1024) -> dict:
    """Per-segment posterior means with 2D projections, labels and cluster
    agreement metrics; written as a tensor file plus a JSON manifest."""
    configure_torch_determinism()
    bundle = load_bundle(ckpt)
    if bundle.variant == "bc":
        raise ParameterError("bc has no latent embeddings to export")
    ts = ensure_dataset(cfg, seed=cfg.seeds[0] if cfg.seeds else 0)
    split = dataset_split(cfg, ts)
    segs = datakit.segment(split.source_train, cfg.data.horizon)
    if bundle.steps == 0:
        log.warning("exporting embeddings from an untrained checkpoint")

    chunks: Dict[str, List[np.ndarray]] = {"z_rho": [], "z_sigma": []}
    for start in range(0, len(segs), batch):
        idx = np.arange(start, min(start + batch, len(segs)))
        b = make_batch(segs, idx, bundle.norms)
        with torch.no_grad():
            lat = bundle.model.encode_latents(b)
        for key in ("z_rho", "z_sigma"):
            if lat.get(key) is not None:
                chunks[key].append(lat[key].numpy())
    z_rho = np.concatenate(chunks["z_rho"]).astype(np.float64)
    z_sigma = (np.concatenate(chunks["z_sigma"]).astype(np.float64)
               if chunks["z_sigma"] else None)

    task = segs.task_label.astype(np.int64)
    domain = segs.domain_label.astype(np.int64)
    metrics = {}
    arrays = {"z_rho_mean": z_rho.astype(np.float32),
              "proj_rho": principal_projection(z_rho).astype(np.float32),
              "task_label": task.astype(np.float32),
              "domain_label": domain.astype(np.float32)}
    cl_rho = kmeans(z_rho, cluster_k, seed=derive_seed(ts.seed, "kmeans-rho"))
    metrics["ari_rho_task"] = float(adjusted_rand_score(task, cl_rho))
    metrics["ari_rho_domain"] = float(adjusted_rand_score(domain, cl_rho))
    if z_sigma is not None:
        arrays["z_sigma_mean"] = z_sigma.astype(np.float32)
        arrays["proj_sigma"] = principal_projection(z_sigma).astype(np.float32)
        cl_sigma = kmeans(z_sigma, cluster_k, seed=derive_seed(ts.seed, "kmeans-sigma"))
        metrics["ari_sigma_task"] = float(adjusted_rand_score(task, cl_sigma))
        metrics["ari_sigma_domain"] = float(adjusted_rand_score(domain, cl_sigma))

    out_path = Path(out_path) if out_path else \
        Path(cfg.out_dir) / "reports" / f"embeddings_{bundle.variant}.bin"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_tensor_file(out_path, arrays)
    manifest = {"kind": "embeddings", "variant": bundle.variant,
                "n_segments": len(segs), "cluster_k": cluster_k,
                "domain_names": segs.domain_names, "metrics": metrics,
                "arrays_file": out_path.name}
    write_report(out_path.with_suffix(".json"), manifest)
    return manifest
