"""Offline pretraining loop.

Per step, one shared forward pass over a batch of segments yields the three
gradient flows of the training procedure: the reconstruction+KL objective
updates the encoders, the prior-matching KL updates the priors (encoder
outputs are stop-gradient targets), and the reconstruction term alone reaches
the decoders.  Three Adam optimizers, stepped in that order.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Callable, List, Optional

import numpy as np
import torch

from .data import NormStats, SegmentSet
from .diffusion import DiffusionSchedule
from .errors import TrainingError
from .models import (Batch, LossWeights, NoiseDraws, SkillModel,
                     check_finite_losses, make_batch)
from .seeding import rng_for

log = logging.getLogger(__name__)

DIVERGENCE_FACTOR = 10.0
DIVERGENCE_PATIENCE = 100


def configure_torch_determinism() -> None:
    """Single-threaded CPU execution so reruns are bit-identical regardless of
    the ambient thread configuration."""
    torch.set_num_threads(1)


@dataclass
class LossReport:
    """Logged loss components; ``total`` is composed from the parts in float64
    so the decomposition identity holds exactly."""

    step: int
    rec: float
    kl_rho: float
    kl_sigma: float
    prior_rho: float
    prior_sigma: float
    beta_rho: float
    beta_sigma: float
    total: float = 0.0

    def __post_init__(self):
        if self.total == 0.0:
            self.total = self.rec + self.beta_rho * self.kl_rho + self.beta_sigma * self.kl_sigma

    def to_json(self) -> dict:
        return asdict(self)


def _beta_pair(model: SkillModel, weights: LossWeights) -> tuple[float, float]:
    if model.n_latents == 2:
        return weights.beta_rho, weights.beta_sigma
    if model.n_latents == 1:
        return weights.beta_vae, 0.0
    return 0.0, 0.0


def train_offline(model: SkillModel, segments: SegmentSet, norms: NormStats,
                  sched: DiffusionSchedule, weights: LossWeights,
                  steps: int, batch_size: int, lr: float, seed: int,
                  log_interval: int = 100,
                  on_report: Optional[Callable[[LossReport], None]] = None) -> List[LossReport]:
    """Train ``model`` in place; returns the logged loss history.

    Aborts with TrainingError on NaNs or when the total loss exceeds 10x its
    initial value for 100 consecutive steps.
    """
    configure_torch_determinism()
    rng = rng_for(seed, "train", model.variant)
    groups = model.param_groups()
    opts = {name: torch.optim.Adam(params, lr=lr)
            for name, params in groups.items() if params}
    beta_rho, beta_sigma = _beta_pair(model, weights)
    dims = model.dims

    history: List[LossReport] = []
    initial_total: Optional[float] = None
    bad_streak = 0

    for step in range(steps):
        idx = rng.integers(0, len(segments), size=batch_size)
        batch = make_batch(segments, idx, norms)
        noise = NoiseDraws.draw(rng, batch_size, segments.h, dims.action_dim,
                                dims.latent_dim, sched.K)
        main, prior, comps = model.pretrain_losses(batch, sched, weights, noise)
        check_finite_losses({**comps, "main": main, "prior": prior})

        for opt in opts.values():
            opt.zero_grad(set_to_none=True)
        (main + prior).backward()
        for name in ("encoder", "prior", "decoder"):
            if name in opts:
                opts[name].step()

        comps = {k: float(v.detach()) for k, v in comps.items()}
        total = comps["rec"] + beta_rho * comps["kl_rho"] + beta_sigma * comps["kl_sigma"]
        if initial_total is None:
            initial_total = max(total, 1e-12)
        if total > DIVERGENCE_FACTOR * initial_total:
            bad_streak += 1
            if bad_streak >= DIVERGENCE_PATIENCE:
                raise TrainingError(
                    f"training diverged: total {total:.4g} > "
                    f"{DIVERGENCE_FACTOR}x initial {initial_total:.4g} for "
                    f"{DIVERGENCE_PATIENCE} consecutive steps (step {step})")
        else:
            bad_streak = 0

        if step % log_interval == 0 or step == steps - 1:
            report = LossReport(
                step=step,
                rec=comps["rec"],
                kl_rho=comps["kl_rho"],
                kl_sigma=comps["kl_sigma"],
                prior_rho=comps["prior_rho"],
                prior_sigma=comps["prior_sigma"],
                beta_rho=beta_rho,
                beta_sigma=beta_sigma,
            )
            history.append(report)
            if on_report is not None:
                on_report(report)
            if step % (log_interval * 10) == 0:
                log.info("step %d: rec %.4f total %.4f", step, report.rec, report.total)
    return history
