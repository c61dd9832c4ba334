"""Affine coupling flow used as the label-conditional latent prior.

``forward`` maps a latent z to the base space f(z) where the label Gaussian lives,
returning the log-determinant of the Jacobian alongside.
"""
from __future__ import annotations

import enum

import torch
import torch.nn as nn

from .distributions import DiagGaussian, log_prob

S_MAX = 5.0


class Parity(str, enum.Enum):
    LOW_FIXED = "low_fixed"
    HIGH_FIXED = "high_fixed"

    def flipped(self) -> "Parity":
        return Parity.HIGH_FIXED if self is Parity.LOW_FIXED else Parity.LOW_FIXED


def _mlp(n_in: int, n_hidden: int, n_out: int, zero_last: bool) -> nn.Sequential:
    net = nn.Sequential(
        nn.Linear(n_in, n_hidden),
        nn.Tanh(),
        nn.Linear(n_hidden, n_hidden),
        nn.Tanh(),
        nn.Linear(n_hidden, n_out),
    )
    if zero_last:
        nn.init.zeros_(net[-1].weight)
        nn.init.zeros_(net[-1].bias)
    return net


class CouplingLayer(nn.Module):
    """RealNVP affine coupling.

    One block of ``split`` coordinates passes through unchanged and drives the
    scale and shift of the other block. With ``LOW_FIXED`` the first ``split``
    coordinates are fixed; with ``HIGH_FIXED`` the last ``split`` are.
    The raw scale output is squashed to [-S_MAX, S_MAX] before exponentiation.
    """

    def __init__(self, dim: int, split: int | None = None, parity: Parity = Parity.LOW_FIXED,
                 hidden: int = 64, init_identity: bool = True):
        super().__init__()
        split = dim // 2 if split is None else split
        if not 1 <= split < dim:
            raise ValueError(f"split index must satisfy 1 <= d < D, got d={split}, D={dim}")
        self.dim = dim
        self.split = split
        self.parity = Parity(parity)
        self.s_net = _mlp(split, hidden, dim - split, init_identity)
        self.t_net = _mlp(split, hidden, dim - split, init_identity)

    def _partition(self, v: torch.Tensor):
        if v.shape[-1] != self.dim:
            raise ValueError(f"expected last dimension {self.dim}, got {v.shape[-1]}")
        if self.parity is Parity.LOW_FIXED:
            return v[..., : self.split], v[..., self.split:]
        return v[..., self.dim - self.split:], v[..., : self.dim - self.split]

    def _join(self, fixed: torch.Tensor, moved: torch.Tensor) -> torch.Tensor:
        if self.parity is Parity.LOW_FIXED:
            return torch.cat([fixed, moved], dim=-1)
        return torch.cat([moved, fixed], dim=-1)

    def scale_shift(self, fixed: torch.Tensor):
        s = S_MAX * torch.tanh(self.s_net(fixed) / S_MAX)
        return s, self.t_net(fixed)

    def forward(self, z: torch.Tensor):
        fixed, moved = self._partition(z)
        s, t = self.scale_shift(fixed)
        g = self._join(fixed, moved * torch.exp(s) + t)
        return g, s.sum(-1)

    def inverse(self, g: torch.Tensor) -> torch.Tensor:
        fixed, moved = self._partition(g)
        s, t = self.scale_shift(fixed)
        return self._join(fixed, (moved - t) * torch.exp(-s))


class FlowStack(nn.Module):
    """Coupling layers with alternating parity; depth must be at least 2."""

    def __init__(self, dim: int, depth: int = 4, hidden: int = 64, init_identity: bool = True):
        super().__init__()
        if depth < 2:
            raise ValueError("flow depth must be >= 2 so every coordinate gets transformed")
        parity = Parity.LOW_FIXED
        layers = []
        for _ in range(depth):
            layers.append(CouplingLayer(dim, parity=parity, hidden=hidden, init_identity=init_identity))
            parity = parity.flipped()
        self.layers = nn.ModuleList(layers)
        self.dim = dim

    @property
    def depth(self) -> int:
        return len(self.layers)

    def forward(self, z: torch.Tensor):
        log_det = torch.zeros(z.shape[:-1], dtype=z.dtype, device=z.device)
        for layer in self.layers:
            z, ld = layer(z)
            log_det = log_det + ld
        return z, log_det

    def inverse(self, e: torch.Tensor) -> torch.Tensor:
        for layer in reversed(self.layers):
            e = layer.inverse(e)
        return e


def coupling_forward(z: torch.Tensor, layer: CouplingLayer):
    return layer(z)


def coupling_inverse(g: torch.Tensor, layer: CouplingLayer) -> torch.Tensor:
    return layer.inverse(g)


def flow_forward(z: torch.Tensor, flow: FlowStack):
    return flow(z)


def flow_inverse(e: torch.Tensor, flow: FlowStack) -> torch.Tensor:
    return flow.inverse(e)


def conditional_prior_log_prob(z: torch.Tensor, base: DiagGaussian, flow: FlowStack) -> torch.Tensor:
    """log p(z|y) = log N(f(z); mu_p, sigma_p^2) + log|det df/dz|."""
    f_z, log_det = flow(z)
    return log_prob(f_z, base) + log_det
