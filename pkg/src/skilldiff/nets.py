"""Network building blocks: MLPs, diagonal-Gaussian heads, timestep features.

All model networks are plain MLPs (default 5 hidden layers of 128 units,
GELU).  Distribution heads emit a mean and a pre-softplus spread; the std is
floored to keep KL terms finite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ContractError

GAUSSIAN_STD_FLOOR = 1e-4
LOG_2PI = math.log(2.0 * math.pi)


def mlp(in_dim: int, hidden_layers: int, hidden_size: int, out_dim: int) -> nn.Sequential:
    layers: list[nn.Module] = []
    d = in_dim
    for _ in range(hidden_layers):
        layers += [nn.Linear(d, hidden_size), nn.GELU()]
        d = hidden_size
    layers.append(nn.Linear(d, out_dim))
    return nn.Sequential(*layers)


@dataclass
class DiagGaussian:
    """Diagonal Gaussian given by per-dimension mean and std."""

    mean: torch.Tensor
    std: torch.Tensor

    def sample(self, eps: torch.Tensor) -> torch.Tensor:
        """Reparameterized draw: mean + std * eps."""
        return self.mean + self.std * eps

    def log_prob(self, x: torch.Tensor) -> torch.Tensor:
        """Log density summed over the event dimension."""
        z = (x - self.mean) / self.std
        return (-0.5 * z.pow(2) - torch.log(self.std) - 0.5 * LOG_2PI).sum(-1)

    def detached(self) -> "DiagGaussian":
        return DiagGaussian(self.mean.detach(), self.std.detach())

    @staticmethod
    def standard(shape, dtype=torch.float32) -> "DiagGaussian":
        return DiagGaussian(torch.zeros(shape, dtype=dtype), torch.ones(shape, dtype=dtype))


def gaussian_kl(p: DiagGaussian, q: DiagGaussian) -> torch.Tensor:
    """Closed-form KL(p || q) for diagonal Gaussians, summed over dimensions."""
    if p.mean.shape[-1] != q.mean.shape[-1]:
        raise ContractError(f"KL dimension mismatch: {p.mean.shape[-1]} vs {q.mean.shape[-1]}")
    if not (torch.all(p.std > 0) and torch.all(q.std > 0)):
        raise ContractError("gaussian_kl requires strictly positive std")
    var_ratio = (p.std / q.std).pow(2)
    return 0.5 * (var_ratio + ((p.mean - q.mean) / q.std).pow(2) - 1.0
                  - torch.log(var_ratio)).sum(-1)


class GaussianMLP(nn.Module):
    """MLP emitting a DiagGaussian; std = softplus(raw) + floor."""

    def __init__(self, in_dim: int, out_dim: int, hidden_layers: int = 5,
                 hidden_size: int = 128):
        super().__init__()
        self.out_dim = out_dim
        self.net = mlp(in_dim, hidden_layers, hidden_size, 2 * out_dim)

    def forward(self, x: torch.Tensor) -> DiagGaussian:
        out = self.net(x)
        mean, raw_std = out.split(self.out_dim, dim=-1)
        return DiagGaussian(mean, F.softplus(raw_std) + GAUSSIAN_STD_FLOOR)


def timestep_features(k, dim: int, dtype=torch.float32) -> torch.Tensor:
    """Sinusoidal features of the (1-based) diffusion step index.

    ``k`` may be a python int or an integer tensor; output gains a trailing
    feature axis of size ``dim``.
    """
    if dim % 2 != 0:
        raise ContractError("timestep feature dim must be even")
    if not torch.is_tensor(k):
        k = torch.tensor(k)
    k = k.to(dtype)
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=dtype) / half)
    ang = k.unsqueeze(-1) * freqs
    return torch.cat([torch.sin(ang), torch.cos(ang)], dim=-1)


class NoiseDecoder(nn.Module):
    """Predicts the forward-process noise from (x_k, k, s_t, conditioning z)."""

    def __init__(self, action_dim: int, state_dim: int, cond_dim: int,
                 k_embed_dim: int = 16, hidden_layers: int = 5, hidden_size: int = 128):
        super().__init__()
        self.action_dim = action_dim
        self.k_embed_dim = k_embed_dim
        in_dim = action_dim + k_embed_dim + state_dim + cond_dim
        self.net = mlp(in_dim, hidden_layers, hidden_size, action_dim)

    def forward(self, x_k: torch.Tensor, k, s_t: torch.Tensor,
                z: torch.Tensor) -> torch.Tensor:
        feats = timestep_features(k, self.k_embed_dim, dtype=x_k.dtype)
        if feats.dim() < x_k.dim():
            feats = feats.expand(*x_k.shape[:-1], self.k_embed_dim)
        return self.net(torch.cat([x_k, feats, s_t, z], dim=-1))
