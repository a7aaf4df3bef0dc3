"""Online RL over skill latents: twin-critic soft actor-critic where the
entropy bonus is replaced by a KL penalty toward the learned skill priors.

The agent acts on a semi-MDP: every ``h`` environment steps the policy emits
latents, the frozen decoder executes them step by step, and one high-level
transition (s, z, accumulated discounted reward, s', done, n) is recorded.
Temperature is auto-tuned toward a target KL.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn

from .checkpoint import ModelBundle
from .downstream import (EpisodeSpec, LatentPolicy, evaluate_policy,
                         policy_prior_kl, prior_heads)
from .env.arena import DomainParam, StageOrder, env_reset, env_step
from .errors import TrainingError, UnsupportedVariantError
from .nets import mlp
from .seeding import derive_seed, rng_for

log = logging.getLogger(__name__)


class CriticPair(nn.Module):
    """Twin action-value networks over (state, latents) plus target copies."""

    def __init__(self, state_dim: int, latent_total: int,
                 hidden_layers: int = 5, hidden_size: int = 128):
        super().__init__()
        self.q1 = mlp(state_dim + latent_total, hidden_layers, hidden_size, 1)
        self.q2 = mlp(state_dim + latent_total, hidden_layers, hidden_size, 1)
        self.q1_target = mlp(state_dim + latent_total, hidden_layers, hidden_size, 1)
        self.q2_target = mlp(state_dim + latent_total, hidden_layers, hidden_size, 1)
        self.q1_target.load_state_dict(self.q1.state_dict())
        self.q2_target.load_state_dict(self.q2.state_dict())
        for p in self.q1_target.parameters():
            p.requires_grad_(False)
        for p in self.q2_target.parameters():
            p.requires_grad_(False)

    def online(self, s: torch.Tensor, z: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        x = torch.cat([s, z], dim=-1)
        return self.q1(x).squeeze(-1), self.q2(x).squeeze(-1)

    def target_min(self, s: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        x = torch.cat([s, z], dim=-1)
        return torch.minimum(self.q1_target(x).squeeze(-1), self.q2_target(x).squeeze(-1))

    def polyak(self, tau: float) -> None:
        for online, target in ((self.q1, self.q1_target), (self.q2, self.q2_target)):
            with torch.no_grad():
                for p, pt in zip(online.parameters(), target.parameters()):
                    pt.mul_(1.0 - tau).add_(tau * p)


@dataclass
class Replay:
    """Flat-array replay buffer of high-level transitions."""

    capacity: int
    state_dim: int
    latent_total: int
    size: int = 0
    _ptr: int = 0
    s: np.ndarray = field(init=False)
    z: np.ndarray = field(init=False)
    r: np.ndarray = field(init=False)
    s2: np.ndarray = field(init=False)
    done: np.ndarray = field(init=False)
    n: np.ndarray = field(init=False)

    def __post_init__(self):
        self.s = np.zeros((self.capacity, self.state_dim), dtype=np.float32)
        self.z = np.zeros((self.capacity, self.latent_total), dtype=np.float32)
        self.r = np.zeros(self.capacity, dtype=np.float32)
        self.s2 = np.zeros((self.capacity, self.state_dim), dtype=np.float32)
        self.done = np.zeros(self.capacity, dtype=np.float32)
        self.n = np.zeros(self.capacity, dtype=np.int64)

    def add(self, s, z, r, s2, done, n) -> None:
        i = self._ptr
        self.s[i], self.z[i], self.r[i], self.s2[i] = s, z, r, s2
        self.done[i], self.n[i] = float(done), n
        self._ptr = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, rng: np.random.Generator, batch: int) -> Dict[str, torch.Tensor]:
        idx = rng.integers(0, self.size, size=batch)
        t = lambda a: torch.as_tensor(a)
        return {"s": t(self.s[idx]), "z": t(self.z[idx]), "r": t(self.r[idx]),
                "s2": t(self.s2[idx]), "done": t(self.done[idx]), "n": t(self.n[idx])}


@dataclass
class SacState:
    policy: LatentPolicy
    critics: CriticPair
    log_alpha: torch.Tensor
    policy_opt: torch.optim.Optimizer
    critic_opt: torch.optim.Optimizer
    alpha_opt: torch.optim.Optimizer


def init_sac(policy: LatentPolicy, bundle: ModelBundle, lr: float, seed: int,
             init_alpha: float = 0.1) -> SacState:
    torch.manual_seed(derive_seed(seed, "critics", bundle.variant))
    latent_total = bundle.dims.latent_dim * bundle.model.n_latents
    critics = CriticPair(bundle.dims.state_dim, latent_total,
                         bundle.dims.hidden_layers, bundle.dims.hidden_size)
    log_alpha = torch.tensor(float(np.log(init_alpha)), requires_grad=True)
    return SacState(
        policy=policy,
        critics=critics,
        log_alpha=log_alpha,
        policy_opt=torch.optim.Adam(policy.parameters(), lr=lr),
        critic_opt=torch.optim.Adam(
            list(critics.q1.parameters()) + list(critics.q2.parameters()), lr=lr),
        alpha_opt=torch.optim.Adam([log_alpha], lr=lr),
    )


def rl_update(sac: SacState, bundle: ModelBundle, batch: Dict[str, torch.Tensor],
              discount: float, tau: float, target_kl: float,
              rng: np.random.Generator) -> Dict[str, float]:
    """One SAC update: twin-critic TD step, KL-regularized policy step,
    temperature step, then target polyak averaging.

    Deterministic given (parameters, batch, rng state).
    """
    priors = prior_heads(bundle)
    policy, critics = sac.policy, sac.critics
    n_lat = bundle.model.n_latents
    z_dim = bundle.dims.latent_dim
    b = batch["s"].shape[0]
    draw = lambda: [torch.as_tensor(rng.standard_normal((b, z_dim)), dtype=torch.float32)
                    for _ in range(n_lat)]
    alpha = sac.log_alpha.exp().detach()

    with torch.no_grad():
        kl2, z2 = policy_prior_kl(policy, priors, batch["s2"], draw())
        q_next = critics.target_min(batch["s2"], torch.cat(z2, dim=-1))
        gamma_n = discount ** batch["n"].to(torch.float32)
        y = batch["r"] + gamma_n * (1.0 - batch["done"]) * (q_next - alpha * kl2)
    q1, q2 = critics.online(batch["s"], batch["z"])
    critic_loss = (q1 - y).pow(2).mean() + (q2 - y).pow(2).mean()
    if not torch.isfinite(critic_loss):
        raise TrainingError(f"NaN in critic targets/loss: y range "
                            f"[{float(y.min())}, {float(y.max())}]")
    sac.critic_opt.zero_grad(set_to_none=True)
    critic_loss.backward()
    sac.critic_opt.step()

    kl, z_new = policy_prior_kl(policy, priors, batch["s"], draw())
    q1_pi, q2_pi = critics.online(batch["s"], torch.cat(z_new, dim=-1))
    q_pi = torch.minimum(q1_pi, q2_pi)
    policy_loss = (alpha * kl - q_pi).mean()
    sac.policy_opt.zero_grad(set_to_none=True)
    policy_loss.backward()
    sac.policy_opt.step()

    alpha_loss = sac.log_alpha * (target_kl - float(kl.detach().mean()))
    sac.alpha_opt.zero_grad(set_to_none=True)
    alpha_loss.backward()
    sac.alpha_opt.step()

    critics.polyak(tau)
    return {"critic_loss": float(critic_loss), "policy_loss": float(policy_loss),
            "kl": float(kl.detach().mean()), "alpha": float(alpha)}


@dataclass
class OnlineResult:
    eval_steps: List[int]
    eval_returns: List[float]       # mean over eval episodes at each eval point
    train_episode_steps: List[int]
    train_episode_returns: List[float]
    updates: int = 0


def run_online(bundle: ModelBundle, policy: LatentPolicy, domain: DomainParam,
               order: StageOrder, env_steps: int, lr: float, batch_size: int,
               discount: float, tau: float, target_kl: float,
               replay_capacity: int, updates_per_decision: int,
               warmup_transitions: int, eval_every: int, eval_episodes: int,
               seed: int, horizon: int) -> Tuple[LatentPolicy, OnlineResult]:
    """Online adaptation loop on one target domain.

    Exploration samples latents from the policy every ``horizon`` steps and
    decodes them with the frozen decoder; a deterministic evaluation sweep
    runs every ``eval_every`` environment steps (and once before any update).
    """
    if not isinstance(policy, LatentPolicy):
        raise UnsupportedVariantError("online RL requires a latent policy (prior-bearing variant)")
    model, norms, sched = bundle.model, bundle.norms, bundle.sched
    sac = init_sac(policy, bundle, lr, seed)
    replay = Replay(replay_capacity, bundle.dims.state_dim,
                    bundle.dims.latent_dim * model.n_latents)
    rng = rng_for(seed, "rl", bundle.variant)

    result = OnlineResult([], [], [], [])

    def run_eval(at_step: int) -> None:
        returns = evaluate_policy(bundle, policy, domain, order, horizon,
                                  eval_episodes, derive_seed(seed, "rl-eval", at_step))
        result.eval_steps.append(at_step)
        result.eval_returns.append(float(np.mean(returns)))
        log.info("rl eval @%d: %.3f", at_step, result.eval_returns[-1])

    run_eval(0)
    steps_done = 0
    next_eval = eval_every
    episode_idx = 0
    while steps_done < env_steps:
        state = env_reset(domain, order, derive_seed(seed, "rl-episode", episode_idx))
        ep_return, done = 0.0, False
        while not done and steps_done < env_steps:
            s_flat = state.flatten()
            s_norm = torch.as_tensor(norms.norm_state(s_flat)[None], dtype=torch.float32)
            with torch.no_grad():
                eps = [torch.as_tensor(rng.standard_normal((1, bundle.dims.latent_dim)),
                                       dtype=torch.float32) for _ in range(model.n_latents)]
                latents, _ = policy.sample(s_norm, eps)
            window_reward, gamma_acc, n_steps = 0.0, 1.0, 0
            for _ in range(horizon):
                cur_norm = torch.as_tensor(norms.norm_state(state.flatten())[None],
                                           dtype=torch.float32)
                a_norm = model.decode_actions(cur_norm, latents, sched,
                                              bundle.weights.delta,
                                              derive_seed(seed, "rl-decode", steps_done))
                action = norms.denorm_action(a_norm[0])
                state, r, done = env_step(state, action, domain, order)
                window_reward += gamma_acc * r
                gamma_acc *= discount
                ep_return += r
                steps_done += 1
                n_steps += 1
                if done or steps_done >= env_steps:
                    break
            replay.add(norms.norm_state(s_flat), torch.cat(latents, -1).numpy()[0],
                       window_reward, norms.norm_state(state.flatten()), done, n_steps)
            if replay.size >= warmup_transitions:
                for _ in range(updates_per_decision):
                    info = rl_update(sac, bundle, replay.sample(rng, batch_size),
                                     discount, tau, target_kl, rng)
                    result.updates += 1
            if steps_done >= next_eval:
                run_eval(steps_done)
                next_eval += eval_every
        result.train_episode_steps.append(steps_done)
        result.train_episode_returns.append(ep_return)
        episode_idx += 1
    if not result.eval_steps or result.eval_steps[-1] != steps_done:
        run_eval(steps_done)
    return policy, result
