"""Denoising-diffusion math for action generation.

Variance schedule, forward noising, split guided noise prediction and the
deterministic reverse chain.  Everything here is a pure function of its
inputs; the noise-predictor networks are passed in as callables so the same
code drives training, stub-based tests and rollout sampling.

Step indexing: diffusion steps are 1-based (k in [1, K]); the arrays inside
``DiffusionSchedule`` are 0-based, so step k lives at index k - 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import torch

from .errors import ParameterError, SamplingError, ContractError

# eps(x_k, k, s_t, z) -> predicted noise, same shape as x_k
NoisePredictor = Callable[[torch.Tensor, int, torch.Tensor, torch.Tensor], torch.Tensor]


@dataclass(frozen=True)
class DiffusionSchedule:
    """Linear variance schedule with derived per-step quantities.

    ``zeta`` is the reverse-process noise scale; it is identically zero
    (low-temperature sampling), which makes the reverse chain deterministic.
    """

    K: int
    beta_min: float
    beta_max: float
    beta: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    alpha_bar: np.ndarray = field(repr=False)
    zeta: np.ndarray = field(repr=False)

    def check_step(self, k: int) -> None:
        if not 1 <= k <= self.K:
            raise ParameterError(f"diffusion step k={k} outside [1, {self.K}]")

    def spec(self) -> dict:
        """Serializable description; arrays are rebuilt, never stored."""
        return {"K": self.K, "beta_min": self.beta_min, "beta_max": self.beta_max}

    @staticmethod
    def from_spec(spec: dict) -> "DiffusionSchedule":
        return build_schedule(int(spec["K"]), float(spec["beta_min"]), float(spec["beta_max"]))


def build_schedule(K: int, beta_min: float = 1e-4, beta_max: float = 0.02) -> DiffusionSchedule:
    """Linearly spaced betas with running products for the closed forms."""
    if K < 1:
        raise ParameterError(f"K must be >= 1, got {K}")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ParameterError(f"need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]")
    beta = np.linspace(beta_min, beta_max, K, dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    zeta = np.zeros(K, dtype=np.float64)
    return DiffusionSchedule(K=K, beta_min=float(beta_min), beta_max=float(beta_max),
                             beta=beta, alpha=alpha, alpha_bar=alpha_bar, zeta=zeta)


def forward_noise(a0, k: int, eta, sched: DiffusionSchedule):
    """x_k = sqrt(abar_k) * a0 + sqrt(1 - abar_k) * eta.

    Works on numpy arrays and torch tensors alike (scalar coefficients).
    """
    sched.check_step(k)
    abar = float(sched.alpha_bar[k - 1])
    return math.sqrt(abar) * a0 + math.sqrt(1.0 - abar) * eta


def guided_predict(x_k, k: int, s_t, z_rho, z_sigma, delta: float,
                   eps_rho: NoisePredictor, eps_sigma: NoisePredictor):
    """Guidance-weighted combination of the two specialized noise predictors.

    The invariant decoder sees only z_rho and the variant decoder only
    z_sigma; the outputs are mixed affinely with weight ``delta`` on the
    variant side.
    """
    if delta < 0:
        raise ParameterError(f"guidance weight must be >= 0, got {delta}")
    u = eps_rho(x_k, k, s_t, z_rho)
    v = eps_sigma(x_k, k, s_t, z_sigma)
    if u.shape != v.shape:
        raise ContractError(f"decoder output shapes differ: {tuple(u.shape)} vs {tuple(v.shape)}")
    return (1.0 - delta) * u + delta * v


def reverse_step(x_k, k: int, eta_hat, sched: DiffusionSchedule, noise=None):
    """One deterministic denoising step x_k -> x_{k-1}.

    x_{k-1} = (x_k - (1-alpha_k)/sqrt(1-abar_k) * eta_hat) / sqrt(alpha_k)
              + zeta_k * noise
    with zeta_k = 0 throughout, so ``noise`` is never consumed.
    """
    sched.check_step(k)
    alpha = float(sched.alpha[k - 1])
    abar = float(sched.alpha_bar[k - 1])
    out = (x_k - ((1.0 - alpha) / math.sqrt(1.0 - abar)) * eta_hat) / math.sqrt(alpha)
    zeta = float(sched.zeta[k - 1])
    if zeta != 0.0:
        if noise is None:
            raise ParameterError("zeta > 0 requires reverse-process noise")
        out = out + zeta * noise
    return out


def reverse_chain(x_K: torch.Tensor, sched: DiffusionSchedule,
                  predict: Callable[[torch.Tensor, int], torch.Tensor]) -> torch.Tensor:
    """Iterate ``predict`` + ``reverse_step`` for k = K..1; returns x_0."""
    x = x_K
    for k in range(sched.K, 0, -1):
        eta_hat = predict(x, k)
        if not torch.isfinite(eta_hat).all():
            raise SamplingError(f"non-finite noise prediction at step k={k}")
        x = reverse_step(x, k, eta_hat, sched)
        if not torch.isfinite(x).all():
            raise SamplingError(f"non-finite iterate after step k={k}")
    return x


def sample_action(s_t: torch.Tensor, z_rho: torch.Tensor, z_sigma: torch.Tensor,
                  sched: DiffusionSchedule, delta: float,
                  eps_rho: NoisePredictor, eps_sigma: NoisePredictor,
                  seed: int, action_dim: int,
                  denorm: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> np.ndarray:
    """Decode one action (or a batch) from held latents at state s_t.

    Draws x_K from a seeded unit Gaussian, runs the guided reverse chain,
    clamps the final iterate into the normalized action box and, if a
    de-normalizer is supplied, maps back to raw action units.
    """
    batched = s_t.dim() == 2
    shape = (s_t.shape[0], action_dim) if batched else (action_dim,)
    rng = np.random.default_rng(seed)
    x = torch.from_numpy(rng.standard_normal(shape)).to(torch.float32)

    def predict(x_k: torch.Tensor, k: int) -> torch.Tensor:
        return guided_predict(x_k, k, s_t, z_rho, z_sigma, delta, eps_rho, eps_sigma)

    with torch.no_grad():
        x0 = reverse_chain(x, sched, predict)
    a = np.clip(x0.numpy().astype(np.float64), -1.0, 1.0)
    if denorm is not None:
        a = denorm(a)
    return a
