"""Skill model variants: encoders, priors, decoders and their losses.

Five variants share one pretrain/adapt/evaluate interface:

* ``dual``     - hierarchical encoder (domain-invariant over the window,
                 domain-variant over (z_rho, omega)), state-conditioned
                 priors, and a split diffusion decoder combined with
                 classifier-free-style guidance.  The full framework.
* ``hier``     - same hierarchical encoder and priors, but a single diffusion
                 decoder conditioned on both latents (ablation).
* ``flat``     - one latent, one diffusion decoder (ablation).
* ``skillvae`` - one latent with a closed-loop feed-forward action decoder
                 trained by the plain ELBO (reconstruction + KL) baseline.
* ``bc``       - direct state->action regression.

Losses follow the printed objectives: the reconstruction term is the L2
noise-prediction error of the (guided) decoder; the encoder regularizers are
KL(N(0, I) || q); the prior loss is KL(prior || stop-grad(encoder)) so priors
chase encoders and never the reverse.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn

from .diffusion import DiffusionSchedule, guided_predict, reverse_chain
from .errors import ParameterError, TrainingError, UnsupportedVariantError
from .nets import DiagGaussian, GaussianMLP, NoiseDecoder, gaussian_kl, mlp

VARIANT_KINDS = ("dual", "hier", "flat", "skillvae", "bc")


@dataclass(frozen=True)
class ModelDims:
    state_dim: int
    action_dim: int
    omega_dim: int
    horizon: int
    latent_dim: int = 32
    hidden_layers: int = 5
    hidden_size: int = 128
    k_embed_dim: int = 16

    @property
    def window_dim(self) -> int:
        return self.horizon * (self.state_dim + self.action_dim)


@dataclass(frozen=True)
class LossWeights:
    beta_rho: float = 5e-4
    beta_sigma: float = 1e-4
    beta_vae: float = 5e-4   # single-latent baselines
    delta: float = 0.5       # guidance weight


@dataclass
class Batch:
    """One minibatch of normalized segments as torch tensors."""

    states: torch.Tensor       # [B, h, S]
    actions: torch.Tensor      # [B, h, A]
    omega: torch.Tensor        # [B, omega_dim]
    first_state: torch.Tensor  # [B, S]

    @property
    def window(self) -> torch.Tensor:
        b = self.states.shape[0]
        return torch.cat([self.states.reshape(b, -1), self.actions.reshape(b, -1)], dim=-1)


def make_batch(seg, idx: np.ndarray, norms, dtype=torch.float32) -> Batch:
    states = norms.norm_state(seg.states[idx].astype(np.float64))
    actions = norms.norm_action(seg.actions[idx].astype(np.float64))
    first = norms.norm_state(seg.first_state[idx].astype(np.float64))
    t = lambda a: torch.as_tensor(a, dtype=dtype)
    return Batch(t(states), t(actions), t(seg.omega[idx]), t(first))


@dataclass
class NoiseDraws:
    """Frozen stochasticity for one loss evaluation (reparameterization draws,
    diffusion step indices, forward-process noise)."""

    eps_rho: torch.Tensor    # [B, Z]
    eps_sigma: torch.Tensor  # [B, Z]
    k: torch.Tensor          # [B, h] long in [1, K]
    eta: torch.Tensor        # [B, h, A]

    @staticmethod
    def draw(rng: np.random.Generator, batch: int, horizon: int, action_dim: int,
             latent_dim: int, K: int, dtype=torch.float32) -> "NoiseDraws":
        t = lambda a: torch.as_tensor(a, dtype=dtype)
        return NoiseDraws(
            eps_rho=t(rng.standard_normal((batch, latent_dim))),
            eps_sigma=t(rng.standard_normal((batch, latent_dim))),
            k=torch.as_tensor(rng.integers(1, K + 1, size=(batch, horizon))),
            eta=t(rng.standard_normal((batch, horizon, action_dim))),
        )


def noise_prediction_loss(batch: Batch, predict: Callable, sched: DiffusionSchedule,
                          noise: NoiseDraws) -> torch.Tensor:
    """Mean over (segment, step) of ||predict(x_k, k, s_t) - eta||^2.

    x_k comes from the closed-form forward noising of the normalized action at
    the per-step drawn index k; ``predict`` maps flattened (x_k, k, s_t) rows
    to noise estimates (latent conditioning is closed over by the caller).
    """
    b, h, a_dim = batch.actions.shape
    dtype = batch.actions.dtype
    abar = torch.as_tensor(sched.alpha_bar, dtype=dtype)[noise.k - 1]
    x_k = torch.sqrt(abar).unsqueeze(-1) * batch.actions \
        + torch.sqrt(1.0 - abar).unsqueeze(-1) * noise.eta
    flat = lambda x: x.reshape(b * h, *x.shape[2:])
    eta_hat = predict(flat(x_k), noise.k.reshape(-1), flat(batch.states))
    return (eta_hat - flat(noise.eta)).pow(2).sum(-1).mean()


def _repeat_latent(z: torch.Tensor, h: int) -> torch.Tensor:
    """One latent per segment, shared across its h reconstruction terms."""
    return z.repeat_interleave(h, dim=0)


def _seeded_unit_noise(shape, seed: int, dtype=torch.float32) -> torch.Tensor:
    rng = np.random.default_rng(seed)
    return torch.as_tensor(rng.standard_normal(shape), dtype=dtype)


class SkillModel(nn.Module):
    """Interface shared by all variants."""

    variant: str = "?"
    has_priors: bool = True
    n_latents: int = 1

    def param_groups(self) -> Dict[str, List[nn.Parameter]]:
        raise NotImplementedError

    def pretrain_losses(self, batch: Batch, sched: DiffusionSchedule,
                        weights: LossWeights, noise: NoiseDraws):
        """Returns (encoder/decoder loss, prior loss, component dict)."""
        raise NotImplementedError

    def encode_latents(self, batch: Batch) -> Dict[str, torch.Tensor]:
        """Posterior means for embedding export."""
        raise NotImplementedError

    def policy_heads(self) -> Tuple[GaussianMLP, ...]:
        """Fresh policy networks initialized as exact copies of the priors."""
        raise NotImplementedError

    def decode_actions(self, s: torch.Tensor, latents: Tuple[torch.Tensor, ...],
                       sched: DiffusionSchedule, delta: float, seed: int) -> np.ndarray:
        """Normalized actions in [-1, 1] for a batch of states and held latents."""
        raise NotImplementedError

    def finetune_loss(self, latents: Tuple[torch.Tensor, ...], batch: Batch,
                      sched: DiffusionSchedule, weights: LossWeights,
                      noise: NoiseDraws) -> torch.Tensor:
        """Demo reconstruction through the frozen decoder with policy latents."""
        raise NotImplementedError

    def decoder_parameters(self) -> List[nn.Parameter]:
        return self.param_groups().get("decoder", [])


def _copy_head(src: GaussianMLP) -> GaussianMLP:
    dst = copy.deepcopy(src)
    for p in dst.parameters():
        p.requires_grad_(True)
    return dst


class DualGuidedModel(SkillModel):
    """Hierarchical encoder + split guided diffusion decoder (full framework)."""

    variant = "dual"
    n_latents = 2

    def __init__(self, dims: ModelDims):
        super().__init__()
        self.dims = dims
        d = dims
        self.q_rho = GaussianMLP(d.window_dim, d.latent_dim, d.hidden_layers, d.hidden_size)
        self.q_sigma = GaussianMLP(d.latent_dim + d.omega_dim, d.latent_dim,
                                   d.hidden_layers, d.hidden_size)
        self.p_rho = GaussianMLP(d.state_dim, d.latent_dim, d.hidden_layers, d.hidden_size)
        self.p_sigma = GaussianMLP(d.latent_dim, d.latent_dim, d.hidden_layers, d.hidden_size)
        self.eps_rho = NoiseDecoder(d.action_dim, d.state_dim, d.latent_dim,
                                    d.k_embed_dim, d.hidden_layers, d.hidden_size)
        self.eps_sigma = NoiseDecoder(d.action_dim, d.state_dim, d.latent_dim,
                                      d.k_embed_dim, d.hidden_layers, d.hidden_size)

    # -- spec-facing encoder/prior operations ------------------------------
    def encode_invariant(self, states: torch.Tensor, actions: torch.Tensor) -> DiagGaussian:
        """Window posterior over the domain-invariant latent; the domain
        encoding is deliberately not an input."""
        b = states.shape[0]
        expected = self.dims.horizon
        if states.shape[1] != expected or actions.shape[1] != expected:
            raise ParameterError(f"window length must be h={expected}")
        return self.q_rho(torch.cat([states.reshape(b, -1), actions.reshape(b, -1)], -1))

    def encode_variant(self, z_rho: torch.Tensor, omega: torch.Tensor) -> DiagGaussian:
        return self.q_sigma(torch.cat([z_rho, omega], dim=-1))

    def prior_invariant(self, s_t: torch.Tensor) -> DiagGaussian:
        return self.p_rho(s_t)

    def prior_variant(self, z_rho: torch.Tensor) -> DiagGaussian:
        """Conditioned solely on the domain-invariant latent."""
        return self.p_sigma(z_rho)

    # -----------------------------------------------------------------------
    def param_groups(self):
        return {
            "encoder": list(self.q_rho.parameters()) + list(self.q_sigma.parameters()),
            "prior": list(self.p_rho.parameters()) + list(self.p_sigma.parameters()),
            "decoder": list(self.eps_rho.parameters()) + list(self.eps_sigma.parameters()),
        }

    def _guided(self, z_rho: torch.Tensor, z_sigma: torch.Tensor, delta: float):
        def predict(x_k, k, s_t):
            return guided_predict(x_k, k, s_t, z_rho, z_sigma, delta,
                                  self.eps_rho, self.eps_sigma)
        return predict

    def pretrain_losses(self, batch, sched, weights, noise):
        h = batch.states.shape[1]
        q_rho = self.encode_invariant(batch.states, batch.actions)
        z_rho = q_rho.sample(noise.eps_rho)
        q_sigma = self.encode_variant(z_rho, batch.omega)
        z_sigma = q_sigma.sample(noise.eps_sigma)

        rec = noise_prediction_loss(
            batch, self._guided(_repeat_latent(z_rho, h), _repeat_latent(z_sigma, h),
                                weights.delta), sched, noise)
        unit = DiagGaussian.standard(q_rho.mean.shape, dtype=q_rho.mean.dtype)
        kl_rho = gaussian_kl(unit, q_rho).mean()
        kl_sigma = gaussian_kl(unit, q_sigma).mean()
        main = rec + weights.beta_rho * kl_rho + weights.beta_sigma * kl_sigma

        z_rho_sg = z_rho.detach()
        prior_rho = gaussian_kl(self.prior_invariant(batch.first_state), q_rho.detached()).mean()
        prior_sigma = gaussian_kl(self.prior_variant(z_rho_sg), q_sigma.detached()).mean()
        prior = prior_rho + prior_sigma

        return main, prior, {"rec": rec, "kl_rho": kl_rho, "kl_sigma": kl_sigma,
                             "prior_rho": prior_rho, "prior_sigma": prior_sigma}

    def encode_latents(self, batch):
        q_rho = self.encode_invariant(batch.states, batch.actions)
        q_sigma = self.encode_variant(q_rho.mean, batch.omega)
        return {"z_rho": q_rho.mean, "z_sigma": q_sigma.mean}

    def policy_heads(self):
        return _copy_head(self.p_rho), _copy_head(self.p_sigma)

    def decode_actions(self, s, latents, sched, delta, seed):
        z_rho, z_sigma = latents
        x = _seeded_unit_noise((s.shape[0], self.dims.action_dim), seed, s.dtype)
        predict = self._guided(z_rho, z_sigma, delta)
        with torch.no_grad():
            x0 = reverse_chain(x, sched, lambda xk, k: predict(xk, k, s))
        return np.clip(x0.numpy().astype(np.float64), -1.0, 1.0)

    def finetune_loss(self, latents, batch, sched, weights, noise):
        z_rho, z_sigma = latents
        h = batch.states.shape[1]
        return noise_prediction_loss(
            batch, self._guided(_repeat_latent(z_rho, h), _repeat_latent(z_sigma, h),
                                weights.delta), sched, noise)


class HierPlainModel(SkillModel):
    """Hierarchical encoder, single diffusion decoder over both latents."""

    variant = "hier"
    n_latents = 2

    def __init__(self, dims: ModelDims):
        super().__init__()
        self.dims = dims
        d = dims
        self.q_rho = GaussianMLP(d.window_dim, d.latent_dim, d.hidden_layers, d.hidden_size)
        self.q_sigma = GaussianMLP(d.latent_dim + d.omega_dim, d.latent_dim,
                                   d.hidden_layers, d.hidden_size)
        self.p_rho = GaussianMLP(d.state_dim, d.latent_dim, d.hidden_layers, d.hidden_size)
        self.p_sigma = GaussianMLP(d.latent_dim, d.latent_dim, d.hidden_layers, d.hidden_size)
        self.eps = NoiseDecoder(d.action_dim, d.state_dim, 2 * d.latent_dim,
                                d.k_embed_dim, d.hidden_layers, d.hidden_size)

    def param_groups(self):
        return {
            "encoder": list(self.q_rho.parameters()) + list(self.q_sigma.parameters()),
            "prior": list(self.p_rho.parameters()) + list(self.p_sigma.parameters()),
            "decoder": list(self.eps.parameters()),
        }

    def _predict_with(self, z: torch.Tensor):
        return lambda x_k, k, s_t: self.eps(x_k, k, s_t, z)

    def pretrain_losses(self, batch, sched, weights, noise):
        b, h = batch.states.shape[:2]
        q_rho = self.q_rho(batch.window)
        z_rho = q_rho.sample(noise.eps_rho)
        q_sigma = self.q_sigma(torch.cat([z_rho, batch.omega], -1))
        z_sigma = q_sigma.sample(noise.eps_sigma)

        z_both = _repeat_latent(torch.cat([z_rho, z_sigma], -1), h)
        rec = noise_prediction_loss(batch, self._predict_with(z_both), sched, noise)
        unit = DiagGaussian.standard(q_rho.mean.shape, dtype=q_rho.mean.dtype)
        kl_rho = gaussian_kl(unit, q_rho).mean()
        kl_sigma = gaussian_kl(unit, q_sigma).mean()
        main = rec + weights.beta_rho * kl_rho + weights.beta_sigma * kl_sigma

        prior_rho = gaussian_kl(self.p_rho(batch.first_state), q_rho.detached()).mean()
        prior_sigma = gaussian_kl(self.p_sigma(z_rho.detach()), q_sigma.detached()).mean()

        return main, prior_rho + prior_sigma, {
            "rec": rec, "kl_rho": kl_rho, "kl_sigma": kl_sigma,
            "prior_rho": prior_rho, "prior_sigma": prior_sigma}

    def encode_latents(self, batch):
        q_rho = self.q_rho(batch.window)
        q_sigma = self.q_sigma(torch.cat([q_rho.mean, batch.omega], -1))
        return {"z_rho": q_rho.mean, "z_sigma": q_sigma.mean}

    def policy_heads(self):
        return _copy_head(self.p_rho), _copy_head(self.p_sigma)

    def decode_actions(self, s, latents, sched, delta, seed):
        z = torch.cat(latents, dim=-1)
        x = _seeded_unit_noise((s.shape[0], self.dims.action_dim), seed, s.dtype)
        with torch.no_grad():
            x0 = reverse_chain(x, sched, lambda xk, k: self.eps(xk, k, s, z))
        return np.clip(x0.numpy().astype(np.float64), -1.0, 1.0)

    def finetune_loss(self, latents, batch, sched, weights, noise):
        h = batch.states.shape[1]
        z = _repeat_latent(torch.cat(latents, dim=-1), h)
        return noise_prediction_loss(batch, self._predict_with(z), sched, noise)


class FlatPlainModel(SkillModel):
    """Single latent, single diffusion decoder."""

    variant = "flat"
    n_latents = 1

    def __init__(self, dims: ModelDims):
        super().__init__()
        self.dims = dims
        d = dims
        self.q = GaussianMLP(d.window_dim, d.latent_dim, d.hidden_layers, d.hidden_size)
        self.p = GaussianMLP(d.state_dim, d.latent_dim, d.hidden_layers, d.hidden_size)
        self.eps = NoiseDecoder(d.action_dim, d.state_dim, d.latent_dim,
                                d.k_embed_dim, d.hidden_layers, d.hidden_size)

    def param_groups(self):
        return {"encoder": list(self.q.parameters()),
                "prior": list(self.p.parameters()),
                "decoder": list(self.eps.parameters())}

    def pretrain_losses(self, batch, sched, weights, noise):
        h = batch.states.shape[1]
        q = self.q(batch.window)
        z = q.sample(noise.eps_rho)
        z_rep = _repeat_latent(z, h)
        rec = noise_prediction_loss(batch, lambda x, k, s: self.eps(x, k, s, z_rep),
                                    sched, noise)
        unit = DiagGaussian.standard(q.mean.shape, dtype=q.mean.dtype)
        kl = gaussian_kl(unit, q).mean()
        main = rec + weights.beta_vae * kl
        prior = gaussian_kl(self.p(batch.first_state), q.detached()).mean()
        zero = torch.zeros((), dtype=rec.dtype)
        return main, prior, {"rec": rec, "kl_rho": kl, "kl_sigma": zero,
                             "prior_rho": prior, "prior_sigma": zero}

    def encode_latents(self, batch):
        return {"z_rho": self.q(batch.window).mean, "z_sigma": None}

    def policy_heads(self):
        return (_copy_head(self.p),)

    def decode_actions(self, s, latents, sched, delta, seed):
        (z,) = latents
        x = _seeded_unit_noise((s.shape[0], self.dims.action_dim), seed, s.dtype)
        with torch.no_grad():
            x0 = reverse_chain(x, sched, lambda xk, k: self.eps(xk, k, s, z))
        return np.clip(x0.numpy().astype(np.float64), -1.0, 1.0)

    def finetune_loss(self, latents, batch, sched, weights, noise):
        h = batch.states.shape[1]
        z_rep = _repeat_latent(latents[0], h)
        return noise_prediction_loss(batch, lambda x, k, s: self.eps(x, k, s, z_rep),
                                     sched, noise)


class SkillVaeModel(SkillModel):
    """Single latent with a closed-loop feed-forward action decoder (ELBO)."""

    variant = "skillvae"
    n_latents = 1

    def __init__(self, dims: ModelDims):
        super().__init__()
        self.dims = dims
        d = dims
        self.q = GaussianMLP(d.window_dim, d.latent_dim, d.hidden_layers, d.hidden_size)
        self.p = GaussianMLP(d.state_dim, d.latent_dim, d.hidden_layers, d.hidden_size)
        self.dec = mlp(d.state_dim + d.latent_dim, d.hidden_layers, d.hidden_size, d.action_dim)

    def param_groups(self):
        return {"encoder": list(self.q.parameters()),
                "prior": list(self.p.parameters()),
                "decoder": list(self.dec.parameters())}

    def _reconstruct(self, z: torch.Tensor, batch: Batch) -> torch.Tensor:
        b, h, a_dim = batch.actions.shape
        s = batch.states.reshape(b * h, -1)
        a_hat = self.dec(torch.cat([s, _repeat_latent(z, h)], dim=-1))
        return (a_hat - batch.actions.reshape(b * h, a_dim)).pow(2).sum(-1).mean()

    def pretrain_losses(self, batch, sched, weights, noise):
        q = self.q(batch.window)
        z = q.sample(noise.eps_rho)
        rec = self._reconstruct(z, batch)
        unit = DiagGaussian.standard(q.mean.shape, dtype=q.mean.dtype)
        kl = gaussian_kl(unit, q).mean()
        main = rec + weights.beta_vae * kl
        prior = gaussian_kl(self.p(batch.first_state), q.detached()).mean()
        zero = torch.zeros((), dtype=rec.dtype)
        return main, prior, {"rec": rec, "kl_rho": kl, "kl_sigma": zero,
                             "prior_rho": prior, "prior_sigma": zero}

    def encode_latents(self, batch):
        return {"z_rho": self.q(batch.window).mean, "z_sigma": None}

    def policy_heads(self):
        return (_copy_head(self.p),)

    def decode_actions(self, s, latents, sched, delta, seed):
        with torch.no_grad():
            a = self.dec(torch.cat([s, latents[0]], dim=-1))
        return np.clip(a.numpy().astype(np.float64), -1.0, 1.0)

    def finetune_loss(self, latents, batch, sched, weights, noise):
        return self._reconstruct(latents[0], batch)


class BCModel(SkillModel):
    """Plain behavior cloning; no latents, no priors."""

    variant = "bc"
    has_priors = False
    n_latents = 0

    def __init__(self, dims: ModelDims):
        super().__init__()
        self.dims = dims
        self.actor = mlp(dims.state_dim, dims.hidden_layers, dims.hidden_size,
                         dims.action_dim)

    def param_groups(self):
        return {"decoder": list(self.actor.parameters())}

    def _reconstruct(self, batch: Batch) -> torch.Tensor:
        b, h, a_dim = batch.actions.shape
        a_hat = self.actor(batch.states.reshape(b * h, -1))
        return (a_hat - batch.actions.reshape(b * h, a_dim)).pow(2).sum(-1).mean()

    def pretrain_losses(self, batch, sched, weights, noise):
        rec = self._reconstruct(batch)
        zero = torch.zeros((), dtype=rec.dtype)
        return rec, zero, {"rec": rec, "kl_rho": zero, "kl_sigma": zero,
                           "prior_rho": zero, "prior_sigma": zero}

    def encode_latents(self, batch):
        raise UnsupportedVariantError("bc has no latent encoder")

    def policy_heads(self):
        raise UnsupportedVariantError("bc has no skill priors to copy")

    def decode_actions(self, s, latents, sched, delta, seed):
        with torch.no_grad():
            a = self.actor(s)
        return np.clip(a.numpy().astype(np.float64), -1.0, 1.0)

    def finetune_loss(self, latents, batch, sched, weights, noise):
        return self._reconstruct(batch)


_VARIANT_CLASSES = {
    "dual": DualGuidedModel,
    "hier": HierPlainModel,
    "flat": FlatPlainModel,
    "skillvae": SkillVaeModel,
    "bc": BCModel,
}


def build_variant(kind: str, dims: ModelDims) -> SkillModel:
    if kind not in _VARIANT_CLASSES:
        raise ParameterError(f"unknown variant {kind!r}; expected one of {VARIANT_KINDS}")
    return _VARIANT_CLASSES[kind](dims)


def check_finite_losses(components: Dict[str, torch.Tensor]) -> None:
    for name, value in components.items():
        if not torch.isfinite(value).all():
            raise TrainingError(f"non-finite loss component {name!r}: {value}")
