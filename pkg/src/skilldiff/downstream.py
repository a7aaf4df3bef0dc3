"""Downstream adaptation: high-level policy over skill latents with the
frozen decoder, plus few-shot imitation fine-tuning.

The high-level policy factorizes like the priors it is initialized from:
pi(z_rho, z_sigma | s) = pi_rho(z_rho | s) * pi_sigma(z_sigma | z_rho) for the
hierarchical variants, or a single head for the one-latent baselines.  During
a rollout the policy emits latents every ``h`` environment steps and the
frozen decoder turns them into per-step actions, closed loop on the current
state.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn

from .checkpoint import ModelBundle, decoder_hash
from .data import segment
from .env.arena import DomainParam, EnvState, StageOrder, env_reset, env_step
from .env.datagen import Trajectory
from .errors import ContractError, ParameterError, UnsupportedVariantError
from .models import NoiseDraws, make_batch
from .nets import DiagGaussian, GaussianMLP, gaussian_kl
from .seeding import derive_seed, rng_for

log = logging.getLogger(__name__)


class LatentPolicy(nn.Module):
    """Factored (or single-head) Gaussian policy over skill latents."""

    def __init__(self, heads: Sequence[GaussianMLP]):
        super().__init__()
        if not 1 <= len(heads) <= 2:
            raise ParameterError("LatentPolicy takes one or two heads")
        self.heads = nn.ModuleList(heads)

    @property
    def factored(self) -> bool:
        return len(self.heads) == 2

    def dist_rho(self, s: torch.Tensor) -> DiagGaussian:
        return self.heads[0](s)

    def dist_sigma(self, z_rho: torch.Tensor) -> DiagGaussian:
        if not self.factored:
            raise ContractError("single-head policy has no variant head")
        return self.heads[1](z_rho)

    def sample(self, s: torch.Tensor, eps: Sequence[torch.Tensor]
               ) -> Tuple[Tuple[torch.Tensor, ...], Tuple[DiagGaussian, ...]]:
        """Reparameterized latents plus the distributions they came from."""
        d_rho = self.dist_rho(s)
        z_rho = d_rho.sample(eps[0])
        if not self.factored:
            return (z_rho,), (d_rho,)
        d_sigma = self.dist_sigma(z_rho)
        z_sigma = d_sigma.sample(eps[1])
        return (z_rho, z_sigma), (d_rho, d_sigma)

    def mean_latents(self, s: torch.Tensor) -> Tuple[torch.Tensor, ...]:
        d_rho = self.dist_rho(s)
        if not self.factored:
            return (d_rho.mean,)
        return d_rho.mean, self.dist_sigma(d_rho.mean).mean

    def log_prob(self, s: torch.Tensor, latents: Tuple[torch.Tensor, ...]) -> torch.Tensor:
        """Joint log density; factorizes as the sum of the head terms."""
        lp = self.dist_rho(s).log_prob(latents[0])
        if self.factored:
            lp = lp + self.dist_sigma(latents[0]).log_prob(latents[1])
        return lp


class BCPolicy(nn.Module):
    """Trainable clone of the behavior-cloning actor for adaptation."""

    def __init__(self, actor: nn.Module):
        super().__init__()
        self.actor = actor


def init_policy(bundle: ModelBundle) -> LatentPolicy:
    """High-level policy initialized as an exact parameter copy of the priors."""
    if not bundle.model.has_priors:
        raise UnsupportedVariantError(
            f"variant {bundle.variant!r} has no skill priors to initialize from")
    return LatentPolicy(bundle.model.policy_heads())


def make_adapt_policy(bundle: ModelBundle) -> nn.Module:
    """Adaptation target for any variant (prior copies, or the actor clone)."""
    if bundle.variant == "bc":
        actor = copy.deepcopy(bundle.model.actor)
        for p in actor.parameters():
            p.requires_grad_(True)
        return BCPolicy(actor)
    return init_policy(bundle)


def prior_heads(bundle: ModelBundle) -> Tuple[GaussianMLP, ...]:
    m = bundle.model
    if m.n_latents == 2:
        return m.p_rho, m.p_sigma
    if m.n_latents == 1:
        return (m.p,)
    raise UnsupportedVariantError(f"variant {bundle.variant!r} has no priors")


def policy_prior_kl(policy: LatentPolicy, priors: Tuple[GaussianMLP, ...],
                    s: torch.Tensor, eps: Sequence[torch.Tensor]
                    ) -> Tuple[torch.Tensor, Tuple[torch.Tensor, ...]]:
    """KL(pi || prior) per batch row, and the reparameterized latents used.

    For factored policies the variant-side KL conditions both sides on the
    same sampled z_rho.
    """
    d_rho = policy.dist_rho(s)
    kl = gaussian_kl(d_rho, priors[0](s))
    z_rho = d_rho.sample(eps[0])
    if not policy.factored:
        return kl, (z_rho,)
    d_sigma = policy.dist_sigma(z_rho)
    kl = kl + gaussian_kl(d_sigma, priors[1](z_rho))
    z_sigma = d_sigma.sample(eps[1])
    return kl, (z_rho, z_sigma)


# ---------------------------------------------------------------------------
# Rollouts
# ---------------------------------------------------------------------------

@dataclass
class EpisodeSpec:
    domain: DomainParam
    order: StageOrder
    seed: int


def rollout_episodes(bundle: ModelBundle, policy: nn.Module,
                     specs: Sequence[EpisodeSpec], horizon: int,
                     explore: bool = False, seed: int = 0) -> List[Trajectory]:
    """Roll several episodes in lockstep with batched action decoding.

    Latents are resampled every ``horizon`` steps (exploration draws from the
    policy, evaluation uses its means).  Each per-step action comes from the
    frozen decoder conditioned on the current state and the held latents.
    """
    model, norms, sched = bundle.model, bundle.norms, bundle.sched
    delta = bundle.weights.delta
    n = len(specs)
    rng = rng_for(seed, "rollout")
    states: List[EnvState] = [env_reset(sp.domain, sp.order, sp.seed) for sp in specs]
    records = [([s.flatten()], [], []) for s in states]  # states, actions, rewards
    active = np.ones(n, dtype=bool)
    latents: Optional[Tuple[torch.Tensor, ...]] = None
    is_bc = bundle.variant == "bc"
    actor_module = policy.actor if isinstance(policy, BCPolicy) else None

    t = 0
    while active.any():
        idx = np.flatnonzero(active)
        flat = np.stack([states[i].flatten() for i in idx])
        s_norm = torch.as_tensor(norms.norm_state(flat), dtype=torch.float32)

        if not is_bc and t % horizon == 0:
            with torch.no_grad():
                if explore:
                    eps = [torch.as_tensor(
                        rng.standard_normal((len(idx), bundle.dims.latent_dim)),
                        dtype=torch.float32) for _ in range(model.n_latents)]
                    latents, _ = policy.sample(s_norm, eps)
                else:
                    latents = policy.mean_latents(s_norm)
        if is_bc:
            with torch.no_grad():
                a_norm = actor_module(s_norm).numpy().astype(np.float64)
            a_norm = np.clip(a_norm, -1.0, 1.0)
        else:
            a_norm = model.decode_actions(s_norm, latents, sched, delta,
                                          derive_seed(seed, "decode", t))
        actions = norms.denorm_action(a_norm)

        still = []
        for row, i in enumerate(idx):
            nxt, r, done = env_step(states[i], actions[row], specs[i].domain, specs[i].order)
            states[i] = nxt
            records[i][0].append(nxt.flatten())
            records[i][1].append(actions[row])
            records[i][2].append(r)
            if done:
                active[i] = False
            else:
                still.append(i)
        if not is_bc and latents is not None and len(still) < len(idx):
            keep = [row for row, i in enumerate(idx) if i in set(still)]
            latents = tuple(z[keep] for z in latents)
        t += 1

    out = []
    for sp, (ss, aa, rr) in zip(specs, records):
        out.append(Trajectory(np.asarray(ss), np.asarray(aa), np.asarray(rr),
                              sp.domain, sp.order, sp.seed))
    return out


def rollout(policy: nn.Module, bundle: ModelBundle, domain: DomainParam,
            order: StageOrder, seed: int, horizon: int,
            explore: bool = False) -> Trajectory:
    """Single-episode convenience wrapper."""
    return rollout_episodes(bundle, policy, [EpisodeSpec(domain, order, seed)],
                            horizon, explore=explore, seed=seed)[0]


def evaluate_policy(bundle: ModelBundle, policy: nn.Module, domain: DomainParam,
                    order: StageOrder, horizon: int, episodes: int,
                    seed: int) -> List[float]:
    specs = [EpisodeSpec(domain, order, derive_seed(seed, "eval-ep", i))
             for i in range(episodes)]
    trajs = rollout_episodes(bundle, policy, specs, horizon, explore=False, seed=seed)
    return [t.episode_return for t in trajs]


# ---------------------------------------------------------------------------
# Few-shot imitation
# ---------------------------------------------------------------------------

def fewshot_finetune(policy: nn.Module, bundle: ModelBundle,
                     demos: Sequence[Trajectory], steps: int, lr: float,
                     batch_size: int, seed: int,
                     horizon: Optional[int] = None) -> Tuple[nn.Module, List[float]]:
    """Fine-tune only the high-level policy on demo segments through the
    frozen decoder; returns (policy, per-step loss curve).

    The decoder parameter hash is recorded before and verified after; any
    drift raises ContractError.
    """
    if not demos:
        raise ParameterError("fewshot_finetune needs at least one demo trajectory")
    h = horizon or bundle.dims.horizon
    segs = segment(list(demos), h)
    rng = rng_for(seed, "fewshot", bundle.variant)
    opt = torch.optim.Adam([p for p in policy.parameters() if p.requires_grad], lr=lr)
    hash_before = decoder_hash(bundle.model)

    model, norms, sched, weights = bundle.model, bundle.norms, bundle.sched, bundle.weights
    dims = bundle.dims
    curve: List[float] = []
    for _ in range(steps):
        idx = rng.integers(0, len(segs), size=min(batch_size, len(segs)))
        batch = make_batch(segs, idx, norms)
        noise = NoiseDraws.draw(rng, len(idx), h, dims.action_dim, dims.latent_dim, sched.K)
        if isinstance(policy, BCPolicy):
            b, hh, a_dim = batch.actions.shape
            a_hat = policy.actor(batch.states.reshape(b * hh, -1))
            loss = (a_hat - batch.actions.reshape(b * hh, a_dim)).pow(2).sum(-1).mean()
        else:
            latents, _ = policy.sample(batch.first_state,
                                       [noise.eps_rho, noise.eps_sigma])
            loss = model.finetune_loss(latents, batch, sched, weights, noise)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        curve.append(float(loss.detach()))

    if decoder_hash(bundle.model) != hash_before:
        raise ContractError("frozen decoder parameters changed during fine-tuning")
    return policy, curve


def fewshot_eval_loss(policy: nn.Module, bundle: ModelBundle,
                      demos: Sequence[Trajectory], seed: int) -> float:
    """Fine-tuning objective on the full demo set with frozen noise draws."""
    h = bundle.dims.horizon
    segs = segment(list(demos), h)
    rng = rng_for(seed, "fewshot-eval")
    idx = np.arange(len(segs))
    batch = make_batch(segs, idx, bundle.norms)
    noise = NoiseDraws.draw(rng, len(idx), h, bundle.dims.action_dim,
                            bundle.dims.latent_dim, bundle.sched.K)
    with torch.no_grad():
        if isinstance(policy, BCPolicy):
            b, hh, a_dim = batch.actions.shape
            a_hat = policy.actor(batch.states.reshape(b * hh, -1))
            return float((a_hat - batch.actions.reshape(b * hh, a_dim)).pow(2).sum(-1).mean())
        latents, _ = policy.sample(batch.first_state, [noise.eps_rho, noise.eps_sigma])
        return float(bundle.model.finetune_loss(latents, batch, bundle.sched,
                                                bundle.weights, noise))


def warmstart(policy: nn.Module, bundle: ModelBundle,
              trajectories: Sequence[Trajectory], steps: int, lr: float,
              batch_size: int, seed: int) -> Tuple[nn.Module, List[float]]:
    """Single-trajectory warm-up before online RL; same path as few-shot."""
    if len(trajectories) != 1:
        raise ParameterError(f"warmstart takes exactly one trajectory, got {len(trajectories)}")
    return fewshot_finetune(policy, bundle, trajectories, steps, lr, batch_size, seed)
