"""Negative-ELBO objectives for the three model settings."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .distributions import SIGMA_SQ_FLOOR, DiagGaussian, kl_diag_standard, log_prob, optimal_sigma_sq, sample_reparam
from .flow import FlowStack, conditional_prior_log_prob
from .models import CvaeModel, Setting


@dataclass
class LossBreakdown:
    total: torch.Tensor
    recon: torch.Tensor
    kl: torch.Tensor
    sigma_sq: float

    def as_floats(self) -> dict:
        return {
            "total": float(self.total.detach()),
            "recon": float(self.recon.detach()),
            "kl": float(self.kl.detach()),
            "sigma_sq": float(self.sigma_sq),
        }


def _pixels(x: torch.Tensor) -> int:
    return math.prod(x.shape[1:])


def recon_loss_unit_sigma(x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    """(P/2) MSE per image, averaged over the batch; ln(2 pi) constants dropped."""
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    return 0.5 * (x - x_hat).pow(2).flatten(1).sum(1).mean()


def recon_loss_optimal_sigma(x: torch.Tensor, x_hat: torch.Tensor, eps: float = SIGMA_SQ_FLOOR):
    """(P/2) ln sigma*^2 with a single batchwise sigma*^2 = max(MSE, eps).

    sigma*^2 is held fixed for the backward pass, so the gradient is that of
    (P / 2 sigma*^2) * MSE. Returns ``(loss, sigma_sq)``.
    """
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    P = _pixels(x)
    mse = (x - x_hat).pow(2).mean()
    sigma_sq = mse.detach().clamp_min(eps)
    # value is (P/2) ln sigma_sq; the second term is zero-valued and carries the gradient
    loss = 0.5 * P * torch.log(sigma_sq) + 0.5 * P * (mse - mse.detach()) / sigma_sq
    return loss, sigma_sq


def kl_loss_standard(q: DiagGaussian) -> torch.Tensor:
    return kl_diag_standard(q).mean()


def kl_loss_nf(q: DiagGaussian, z_sample: torch.Tensor, base: DiagGaussian, flow: FlowStack) -> torch.Tensor:
    """Single-sample estimate of KL(q(z|x,y) || p(z|y)) with the flow prior, batch-averaged."""
    return (log_prob(z_sample, q) - conditional_prior_log_prob(z_sample, base, flow)).mean()


def total_loss(batch, model: CvaeModel, generator: torch.Generator | None = None,
               noise: torch.Tensor | None = None) -> LossBreakdown:
    """Negative ELBO for ``batch = (images, attrs)`` under the model's setting.

    ``noise`` overrides the reparameterisation noise (otherwise drawn from ``generator``).
    """
    x, y = batch
    y = y.to(x.dtype)
    q = model.encode(x, y)
    if noise is None:
        noise = torch.randn(q.mean.shape, generator=generator, dtype=q.mean.dtype)
    z = sample_reparam(q, noise)
    x_hat = model.decode(z, y)

    setting = model.setting
    if setting is Setting.GAUSSIAN:
        recon = recon_loss_unit_sigma(x, x_hat)
        kl = kl_loss_standard(q)
        sigma_sq = 1.0
    elif setting is Setting.SIGMA_NONNF:
        recon, s = recon_loss_optimal_sigma(x, x_hat)
        kl = kl_loss_standard(q)
        sigma_sq = float(s)
    elif setting is Setting.SIGMA_NF:
        recon, s = recon_loss_optimal_sigma(x, x_hat)
        kl = kl_loss_nf(q, z, model.encode_label(y), model.flow)
        sigma_sq = float(s)
    else:
        raise ValueError(f"unknown setting {setting!r}")
    return LossBreakdown(total=recon + kl, recon=recon, kl=kl, sigma_sq=sigma_sq)
