"""Convolutional encoder/decoder networks and their composition per model setting."""
from __future__ import annotations

import enum
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn

from .distributions import DiagGaussian
from .flow import FlowStack


class Setting(str, enum.Enum):
    GAUSSIAN = "gaussian"
    SIGMA_NONNF = "sigma_nonnf"
    SIGMA_NF = "sigma_nf"

    @classmethod
    def parse(cls, value) -> "Setting":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower().replace("-", "_"))
        except ValueError:
            choices = ", ".join(s.value for s in cls)
            raise ValueError(f"unknown setting {value!r}; expected one of {choices}") from None


@dataclass
class ModelConfig:
    setting: Setting = Setting.SIGMA_NF
    image_shape: tuple[int, int, int] = (3, 86, 86)
    attr_dim: int = 40
    latent_dim: int = 128
    enc_channels: tuple[int, ...] = (32, 64, 128, 256)
    label_channels: tuple[int, int] = (16, 32)
    flow_depth: int = 4
    flow_hidden: int = 64
    q_label_fusion: str = "head"  # "head": y joins the flattened conv features; "planes": y as constant input channels

    def __post_init__(self):
        self.setting = Setting.parse(self.setting)
        if self.q_label_fusion not in ("head", "planes"):
            raise ValueError("q_label_fusion must be 'head' or 'planes'")
        self.image_shape = tuple(int(v) for v in self.image_shape)
        self.enc_channels = tuple(int(v) for v in self.enc_channels)
        self.label_channels = tuple(int(v) for v in self.label_channels)
        if len(self.image_shape) != 3:
            raise ValueError("image_shape must be (C, H, W)")
        if len(self.enc_channels) != 4:
            raise ValueError("enc_channels must list four stage widths")
        if len(self.label_channels) != 2:
            raise ValueError("label_channels must list two stage widths")
        for name in ("attr_dim", "latent_dim", "flow_depth", "flow_hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["setting"] = self.setting.value
        d["image_shape"] = list(self.image_shape)
        d["enc_channels"] = list(self.enc_channels)
        d["label_channels"] = list(self.label_channels)
        return d


def downsampled(size: int, stages: int = 4) -> list[int]:
    """Spatial sizes after each stride-2 stage (kernel 3, padding 1): ceil-halving."""
    sizes = [size]
    for _ in range(stages):
        sizes.append((sizes[-1] + 1) // 2)
    return sizes


def _zero_head(linear: nn.Linear) -> nn.Linear:
    nn.init.zeros_(linear.weight)
    nn.init.zeros_(linear.bias)
    return linear


def _split_gaussian(h: torch.Tensor) -> DiagGaussian:
    mean, log_std = h.chunk(2, dim=-1)
    return DiagGaussian(mean, log_std)


class EncoderQ(nn.Module):
    """Four stride-2 convolutions and an affine head producing q(z | x[, y]).

    With ``label_dim > 0`` the attribute vector is concatenated to the flattened
    convolutional features right before the head.
    """

    def __init__(self, in_channels: int, image_hw: tuple[int, int], latent_dim: int,
                 channels=(32, 64, 128, 256), label_dim: int = 0):
        super().__init__()
        self.label_dim = label_dim
        layers = []
        c_prev = in_channels
        for c in channels:
            layers += [nn.Conv2d(c_prev, c, kernel_size=3, stride=2, padding=1), nn.LeakyReLU(0.2)]
            c_prev = c
        self.body = nn.Sequential(*layers)
        h = downsampled(image_hw[0])[-1]
        w = downsampled(image_hw[1])[-1]
        self.head = _zero_head(nn.Linear(c_prev * h * w + label_dim, 2 * latent_dim))

    def forward(self, x: torch.Tensor, y: torch.Tensor | None = None) -> DiagGaussian:
        h = self.body(x).flatten(1)
        if self.label_dim:
            h = torch.cat([h, y.to(h.dtype)], dim=1)
        return _split_gaussian(self.head(h))


class EncoderP(nn.Module):
    """Two 1-D convolutions over the attribute vector and an affine head: p(z | y) base."""

    def __init__(self, attr_dim: int, latent_dim: int, channels=(16, 32)):
        super().__init__()
        c1, c2 = channels
        self.attr_dim = attr_dim
        self.body = nn.Sequential(
            nn.Conv1d(1, c1, kernel_size=3, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv1d(c1, c2, kernel_size=3, padding=1),
            nn.LeakyReLU(0.2),
        )
        self.head = _zero_head(nn.Linear(c2 * attr_dim, 2 * latent_dim))

    def forward(self, y: torch.Tensor) -> DiagGaussian:
        if y.shape[-1] != self.attr_dim:
            raise ValueError(f"attribute vector length {y.shape[-1]} != {self.attr_dim}")
        return _split_gaussian(self.head(self.body(y.unsqueeze(1)).flatten(1)))


class Decoder(nn.Module):
    """Affine lift followed by four stride-2 transposed convolutions.

    Output padding per stage is chosen so the spatial arithmetic exactly undoes
    the encoder's ceil-halving, e.g. 6 -> 11 -> 22 -> 43 -> 86.
    """

    def __init__(self, in_dim: int, image_shape: tuple[int, int, int], channels=(32, 64, 128, 256)):
        super().__init__()
        C, H, W = image_shape
        hs, ws = downsampled(H), downsampled(W)
        self.image_shape = (C, H, W)
        self.base_shape = (channels[-1], hs[-1], ws[-1])
        self.lift = nn.Sequential(nn.Linear(in_dim, channels[-1] * hs[-1] * ws[-1]), nn.LeakyReLU(0.2))
        outs = list(reversed(channels[:-1])) + [C]
        layers = []
        c_prev = channels[-1]
        for i, c in enumerate(outs):
            src, dst = 4 - i, 3 - i
            pad = (hs[dst] - (2 * hs[src] - 1), ws[dst] - (2 * ws[src] - 1))
            layers.append(nn.ConvTranspose2d(c_prev, c, kernel_size=3, stride=2, padding=1, output_padding=pad))
            layers.append(nn.LeakyReLU(0.2) if i < 3 else nn.Sigmoid())
            c_prev = c
        self.body = nn.Sequential(*layers)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return self.body(self.lift(h).view(-1, *self.base_shape))


class CvaeModel(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        C, H, W = config.image_shape
        self.setting = config.setting
        self.latent_dim = config.latent_dim
        self.attr_dim = config.attr_dim
        # the non-NF sigma model encodes q(z|x) only
        self.q_uses_labels = self.setting is not Setting.SIGMA_NONNF
        planes = self.q_uses_labels and config.q_label_fusion == "planes"
        head = self.q_uses_labels and config.q_label_fusion == "head"
        self.encoder_q = EncoderQ(C + (config.attr_dim if planes else 0), (H, W), config.latent_dim,
                                  config.enc_channels, label_dim=config.attr_dim if head else 0)
        self.decoder = Decoder(config.latent_dim + config.attr_dim, config.image_shape, config.enc_channels)
        if self.setting is Setting.SIGMA_NF:
            self.encoder_p = EncoderP(config.attr_dim, config.latent_dim, config.label_channels)
            self.flow = FlowStack(config.latent_dim, config.flow_depth, config.flow_hidden)
        else:
            self.encoder_p = None
            self.flow = None

    @property
    def learned_variance(self) -> bool:
        return self.setting is not Setting.GAUSSIAN

    def _check_inputs(self, x: torch.Tensor | None, y: torch.Tensor):
        if y.dim() != 2 or y.shape[1] != self.attr_dim:
            raise ValueError(f"attributes must have shape (N, {self.attr_dim}), got {tuple(y.shape)}")
        if x is not None:
            if tuple(x.shape[1:]) != self.config.image_shape:
                raise ValueError(f"images must have shape (N, {self.config.image_shape}), got {tuple(x.shape)}")
            if x.shape[0] != y.shape[0]:
                raise ValueError("image and attribute batch sizes differ")

    def encode(self, x: torch.Tensor, y: torch.Tensor) -> DiagGaussian:
        self._check_inputs(x, y)
        if not self.q_uses_labels:
            return self.encoder_q(x)
        if self.config.q_label_fusion == "planes":
            planes = y[:, :, None, None].expand(-1, -1, x.shape[2], x.shape[3]).to(x.dtype)
            return self.encoder_q(torch.cat([x, planes], dim=1))
        return self.encoder_q(x, y)

    def encode_label(self, y: torch.Tensor) -> DiagGaussian:
        if self.encoder_p is None:
            raise ValueError(f"setting {self.setting.value} has no label encoder")
        self._check_inputs(None, y)
        return self.encoder_p(y)

    def decode(self, z: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        self._check_inputs(None, y)
        if z.dim() != 2 or z.shape[1] != self.latent_dim or z.shape[0] != y.shape[0]:
            raise ValueError(f"latents must have shape ({y.shape[0]}, {self.latent_dim}), got {tuple(z.shape)}")
        return self.decoder(torch.cat([z, y.to(z.dtype)], dim=1))


def build_model(config: ModelConfig) -> CvaeModel:
    return CvaeModel(config)


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


# convenience re-exports matching the functional surface
def encode(x, y, m: CvaeModel) -> DiagGaussian:
    return m.encode(x, y)


def encode_label(y, m: CvaeModel) -> DiagGaussian:
    return m.encode_label(y)


def decode(z, y, m: CvaeModel) -> torch.Tensor:
    return m.decode(z, y)
