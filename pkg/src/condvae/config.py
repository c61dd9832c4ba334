"""Flat JSON run configuration shared by the command-line entry points."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .data import DatasetSpec
from .models import ModelConfig, Setting
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    setting: str = "sigma_nf"
    seed: int = 0
    out_dir: str = "runs/default"
    # data
    source: str = "synthetic"
    n_samples: int = 6000
    data_seed: int = 0
    image_size: list = field(default_factory=lambda: [32, 32])
    root: str | None = None
    attr_file: str | None = None
    train_fraction: float = 5 / 6
    split_seed: int = 0
    hflip: bool = True
    rotate_deg: float = 10.0
    # model
    latent_dim: int = 32
    enc_channels: list = field(default_factory=lambda: [32, 64, 64, 64])
    label_channels: list = field(default_factory=lambda: [16, 32])
    flow_depth: int = 4
    flow_hidden: int = 64
    q_label_fusion: str = "head"
    # training
    batch_size: int = 32
    learning_rate: float = 1e-3
    max_epochs: int = 20
    patience: int = 3
    eval_every: int | None = None
    optimizer: str = "adam"
    grad_clip: float = 10.0
    # sampling
    through_flow: bool = False

    def __post_init__(self):
        try:
            self.setting = Setting.parse(self.setting).value
            self.image_size = [int(v) for v in self.image_size]
            self.enc_channels = [int(v) for v in self.enc_channels]
            self.label_channels = [int(v) for v in self.label_channels]
            # construct the typed views once so bad values fail here, not mid-run
            self.dataset_spec()
            self.train_config()
            self.model_config(attr_dim=1)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dataset_spec(self) -> DatasetSpec:
        return DatasetSpec(source=self.source, image_size=tuple(self.image_size), train_fraction=self.train_fraction,
                           split_seed=self.split_seed, hflip=self.hflip, rotate_deg=self.rotate_deg,
                           n_samples=self.n_samples, seed=self.data_seed, root=self.root, attr_file=self.attr_file)

    def model_config(self, attr_dim: int, channels: int = 3) -> ModelConfig:
        return ModelConfig(setting=self.setting, image_shape=(channels, *self.image_size), attr_dim=attr_dim,
                           latent_dim=self.latent_dim, enc_channels=tuple(self.enc_channels),
                           label_channels=tuple(self.label_channels), flow_depth=self.flow_depth,
                           flow_hidden=self.flow_hidden, q_label_fusion=self.q_label_fusion)

    def train_config(self) -> TrainConfig:
        return TrainConfig(setting=self.setting, batch_size=self.batch_size, learning_rate=self.learning_rate,
                           max_epochs=self.max_epochs, patience=self.patience, eval_every=self.eval_every,
                           seed=self.seed, optimizer=self.optimizer, grad_clip=self.grad_clip)


KEYS = {f.name for f in dataclasses.fields(RunConfig)}


def resolve(values: dict | None = None, **overrides) -> RunConfig:
    """Merge file values with non-None overrides; unknown keys are rejected."""
    merged = dict(values or {})
    merged.update({k: v for k, v in overrides.items() if v is not None})
    unknown = sorted(set(merged) - KEYS)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    return RunConfig(**merged)


def load_config(path) -> dict:
    try:
        values = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(values, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return values


def write_config(config: RunConfig, path):
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
