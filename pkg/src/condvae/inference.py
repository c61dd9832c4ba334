"""Reconstruction, attribute-conditioned sampling and PNG grid export."""
from __future__ import annotations

import numpy as np
import torch
from PIL import Image

from .models import CvaeModel, Setting


def _dtype(model: CvaeModel):
    return next(model.parameters()).dtype


@torch.no_grad()
def reconstruct(x: torch.Tensor, y: torch.Tensor, model: CvaeModel) -> torch.Tensor:
    dt = _dtype(model)
    x, y = x.to(dt), y.to(dt)
    return model.decode(model.encode(x, y).mean, y)


@torch.no_grad()
def conditional_latent(y: torch.Tensor, model: CvaeModel, noise: torch.Tensor,
                       through_flow: bool = False) -> torch.Tensor:
    """Map standard-normal ``noise`` to a decoder latent for labels ``y``.

    The NF setting shifts and scales by the label Gaussian (mu_p + noise * sigma_p);
    with ``through_flow`` the result is additionally pulled back through the
    inverse flow. Other settings return the noise unchanged.
    """
    if model.setting is not Setting.SIGMA_NF:
        return noise
    base = model.encode_label(y.to(noise.dtype))
    z_hat = base.mean + noise * base.std
    if through_flow:
        z_hat = model.flow.inverse(z_hat)
    return z_hat


@torch.no_grad()
def sample_conditional(y: torch.Tensor, model: CvaeModel, seed: int = 0, through_flow: bool = False,
                       noise: torch.Tensor | None = None) -> torch.Tensor:
    """Decode one random image per row of ``y``; deterministic given ``seed``."""
    dt = _dtype(model)
    if y.dim() == 1:
        y = y.unsqueeze(0)
    if y.shape[-1] != model.attr_dim:
        raise ValueError(f"attribute vectors have length {y.shape[-1]}, model expects {model.attr_dim}")
    y = y.to(dt)
    if noise is None:
        g = torch.Generator().manual_seed(seed)
        noise = torch.randn(y.shape[0], model.latent_dim, generator=g, dtype=dt)
    z = conditional_latent(y, model, noise.to(dt), through_flow)
    return model.decode(z, y)


def to_uint8(images: torch.Tensor) -> np.ndarray:
    """(N, C, H, W) floats in [0, 1] -> (N, H, W, C) uint8."""
    arr = images.detach().clamp(0, 1).mul(255).round().to(torch.uint8)
    return arr.permute(0, 2, 3, 1).cpu().numpy()


def tile(images: np.ndarray, n_rows: int, n_cols: int, pad: int = 2, fill: int = 255) -> np.ndarray:
    """Arrange (n_rows * n_cols, H, W, C) uint8 images row-major, ``pad`` pixels between cells."""
    _, H, W, C = images.shape
    out = np.full((n_rows * H + (n_rows - 1) * pad, n_cols * W + (n_cols - 1) * pad, C), fill, dtype=np.uint8)
    for k, img in enumerate(images):
        r, c = divmod(k, n_cols)
        out[r * (H + pad): r * (H + pad) + H, c * (W + pad): c * (W + pad) + W] = img
    return out


def save_png(array: np.ndarray, path):
    if array.shape[-1] == 1:
        array = array[..., 0]
    Image.fromarray(array).save(path, format="PNG")


def sample_grid(attr_rows, model: CvaeModel, seed: int, out_path, n_cols: int = 8,
                through_flow: bool = False) -> np.ndarray:
    """Write a PNG with one row of ``n_cols`` samples per attribute vector, in input order."""
    rows = torch.stack([torch.as_tensor(r, dtype=torch.float32) for r in attr_rows])
    y = rows.repeat_interleave(n_cols, dim=0)
    images = sample_conditional(y, model, seed, through_flow)
    grid = tile(to_uint8(images), len(rows), n_cols)
    save_png(grid, out_path)
    return grid
