"""Diagonal Gaussian kernels used by the encoders, the label prior and the decoder."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch

LOG_STD_MIN = math.log(1e-4)
LOG_STD_MAX = math.log(1e4)
SIGMA_SQ_FLOOR = 1e-6
HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


@dataclass
class DiagGaussian:
    """Gaussian with diagonal covariance, stored as (mean, log_std) over the last axis.

    Leading axes are batch axes. ``log_std`` is clamped to [ln 1e-4, ln 1e4] on
    construction so that sigma stays in a numerically sane range.
    """

    mean: torch.Tensor
    log_std: torch.Tensor

    def __post_init__(self):
        if self.mean.shape != self.log_std.shape:
            raise ValueError(
                f"mean shape {tuple(self.mean.shape)} != log_std shape {tuple(self.log_std.shape)}"
            )
        self.log_std = self.log_std.clamp(LOG_STD_MIN, LOG_STD_MAX)

    @classmethod
    def standard(cls, dim: int, batch_shape=(), dtype=torch.float32) -> "DiagGaussian":
        zeros = torch.zeros(*batch_shape, dim, dtype=dtype)
        return cls(zeros, zeros.clone())

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]

    @property
    def std(self) -> torch.Tensor:
        return self.log_std.exp()

    def log_prob(self, x: torch.Tensor) -> torch.Tensor:
        return log_prob(x, self)

    def sample(self, noise: torch.Tensor) -> torch.Tensor:
        return sample_reparam(self, noise)


def _check_dim(x: torch.Tensor, g: DiagGaussian, what: str = "x"):
    if x.shape[-1] != g.dim:
        raise ValueError(f"{what} has last dimension {x.shape[-1]}, expected {g.dim}")


def log_prob(x: torch.Tensor, g: DiagGaussian) -> torch.Tensor:
    """Exact log-density of ``x`` under ``g``, summed over the last axis (constants kept)."""
    _check_dim(x, g)
    z = (x - g.mean) * torch.exp(-g.log_std)
    return (-g.log_std - 0.5 * z.pow(2) - HALF_LOG_2PI).sum(-1)


def sample_reparam(g: DiagGaussian, noise: torch.Tensor) -> torch.Tensor:
    """mu + sigma * noise; differentiable in mean and log_std."""
    _check_dim(noise, g, "noise")
    return g.mean + g.std * noise


def kl_diag_standard(q: DiagGaussian) -> torch.Tensor:
    """Closed-form KL(q || N(0, I)) per batch element."""
    var = torch.exp(2 * q.log_std)
    return 0.5 * (var + q.mean.pow(2) - 1.0 - 2 * q.log_std).sum(-1)


def optimal_sigma_sq(x: torch.Tensor, x_hat: torch.Tensor, eps: float = SIGMA_SQ_FLOOR) -> torch.Tensor:
    """Maximum-likelihood decoder variance: the mean squared error, floored at ``eps``.

    The mean is taken over every element, so a batch gives a single batchwise estimate.
    """
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    return (x - x_hat).pow(2).mean().clamp_min(eps)


def nll_optimal_sigma(x: torch.Tensor, x_hat: torch.Tensor, eps: float = SIGMA_SQ_FLOOR) -> torch.Tensor:
    """(P/2) ln sigma*^2 for a single example of P elements.

    The additive constant (P/2)(ln 2pi + 1) is dropped; use ``log_prob`` when the
    full density is needed.
    """
    P = x.numel()
    return 0.5 * P * torch.log(optimal_sigma_sq(x, x_hat, eps))
