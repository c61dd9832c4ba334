"""Minibatch training with test-NLL early stopping, plus checkpoint I/O."""
from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import torch
import torch.nn as nn

from .data import DatasetSpec, augment, iter_batches
from .losses import LossBreakdown, total_loss
from .models import CvaeModel, ModelConfig, Setting, build_model

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "condvae-checkpoint/1"


class NonFiniteLossError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    setting: Setting = Setting.SIGMA_NF
    batch_size: int = 64
    learning_rate: float = 1e-3
    max_epochs: int = 20
    patience: int = 3
    eval_every: int | None = None  # steps between evaluations; None -> once per epoch
    seed: int = 0
    optimizer: str = "adam"
    grad_clip: float = 10.0

    def __post_init__(self):
        self.setting = Setting.parse(self.setting)
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("batch_size, max_epochs and patience must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.eval_every is not None and self.eval_every < 1:
            raise ValueError("eval_every must be a positive step count")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["setting"] = self.setting.value
        return d


@dataclass
class TrainState:
    model: nn.Module
    optimizer: torch.optim.Optimizer
    generator: torch.Generator
    step: int = 0
    best_test_nll: float = math.inf
    epochs_since_best: int = 0
    sigma_sq: float = 1.0
    grad_clip: float | None = 10.0
    best_step: int | None = None
    run_config: dict = field(default_factory=dict)
    loss_fn: Callable[..., LossBreakdown] = field(default=total_loss, repr=False)


def make_optimizer(name: str, params, lr: float) -> torch.optim.Optimizer:
    if name == "sgd":
        return torch.optim.SGD(params, lr=lr)
    return torch.optim.Adam(params, lr=lr)


def init_state(config: TrainConfig, model_config: ModelConfig, dtype=torch.float32) -> TrainState:
    """Seeded model construction; the same config always yields the same initial parameters."""
    torch.manual_seed(config.seed)
    model = build_model(model_config).to(dtype)
    return TrainState(
        model=model,
        optimizer=make_optimizer(config.optimizer, model.parameters(), config.learning_rate),
        generator=torch.Generator().manual_seed(config.seed),
        grad_clip=config.grad_clip,
    )


def train_step(state: TrainState, batch) -> tuple[TrainState, LossBreakdown]:
    state.model.train()
    state.optimizer.zero_grad(set_to_none=True)
    out = state.loss_fn(batch, state.model, state.generator)
    if not torch.isfinite(out.total):
        bad = [name for name in ("recon", "kl") if not torch.isfinite(getattr(out, name))]
        raise NonFiniteLossError(
            f"non-finite loss at step {state.step}: recon={float(out.recon.detach())} kl={float(out.kl.detach())} "
            f"sigma_sq={out.sigma_sq} (diverged: {', '.join(bad) or 'total'})"
        )
    out.total.backward()
    if state.grad_clip:
        nn.utils.clip_grad_norm_(state.model.parameters(), state.grad_clip)
    state.optimizer.step()
    state.step += 1
    state.sigma_sq = float(out.sigma_sq)
    return state, out


def decoder_sigma_sq(model: CvaeModel, sigma_sq: float) -> float:
    return float(sigma_sq) if model.learned_variance else 1.0


@torch.no_grad()
def evaluate_nll(model: CvaeModel, test_dataset, sigma_sq: float = 1.0, batch_size: int = 256) -> float:
    """Mean per-image -log p(x | z=mu_q, y) with full Gaussian constants.

    The gaussian setting always uses unit variance; the sigma settings use the
    supplied (frozen, training-time) ``sigma_sq``.
    """
    n = len(test_dataset)
    if n == 0:
        raise ValueError("empty test set")
    var = decoder_sigma_sq(model, sigma_sq)
    was_training = model.training
    model.eval()
    dtype = next(model.parameters()).dtype
    total = 0.0
    for x, y in iter_batches(test_dataset, batch_size, shuffle=False):
        x, y = x.to(dtype), y.to(dtype)
        x_hat = model.decode(model.encode(x, y).mean, y)
        P = x[0].numel()
        sq = (x - x_hat).pow(2).flatten(1).sum(1)
        total += float((0.5 * sq / var + 0.5 * P * math.log(2 * math.pi * var)).sum())
    model.train(was_training)
    return total / n


def fit(config: TrainConfig, model_config: ModelConfig, train_dataset, test_dataset,
        spec: DatasetSpec | None = None, dtype=torch.float32, state: TrainState | None = None):
    """Train until ``max_epochs`` or until ``patience`` evaluations pass without a new best test NLL.

    Returns ``(state, history)``; the state's model holds the best-NLL parameters
    and ``state.sigma_sq`` the variance estimate that went with them.
    """
    if Setting.parse(model_config.setting) is not config.setting:
        raise ValueError("model and training configs disagree on the setting")
    state = state or init_state(config, model_config, dtype)
    history = []
    best = None
    running = []

    def evaluate() -> bool:
        nll = evaluate_nll(state.model, test_dataset, state.sigma_sq)
        means = {k: sum(r[k] for r in running) / len(running) for k in ("total", "recon", "kl")} if running else {}
        rec = {"step": state.step, **{k: means.get(k, math.nan) for k in ("total", "recon", "kl")},
               "sigma_sq": state.sigma_sq, "test_nll": nll}
        history.append(rec)
        running.clear()
        logger.info("step %d: total=%.3f recon=%.3f kl=%.3f sigma_sq=%.3g test_nll=%.3f",
                    rec["step"], rec["total"], rec["recon"], rec["kl"], rec["sigma_sq"], nll)
        nonlocal best
        if nll < state.best_test_nll:
            state.best_test_nll = nll
            state.epochs_since_best = 0
            best = (copy.deepcopy(state.model.state_dict()), state.sigma_sq, state.step)
        else:
            state.epochs_since_best += 1
        return state.epochs_since_best >= config.patience

    stop = False
    for _ in range(config.max_epochs):
        for batch in iter_batches(train_dataset, config.batch_size, state.generator):
            x, y = batch
            if spec is not None and (spec.hflip or spec.rotate_deg > 0):
                x, y = augment((x, y), spec, state.generator)
            _, out = train_step(state, (x.to(dtype), y.to(dtype)))
            running.append(out.as_floats())
            if config.eval_every and state.step % config.eval_every == 0:
                if stop := evaluate():
                    break
        if stop:
            break
        if not config.eval_every:
            if stop := evaluate():
                break

    if best is not None:
        state.model.load_state_dict(best[0])
        state.sigma_sq = best[1]
        state.best_step = best[2]
    return state, history


def write_history(history, path):
    with open(path, "w") as fh:
        for rec in history:
            fh.write(json.dumps(rec) + "\n")


def read_history(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def save_checkpoint(path, state: TrainState, run_config: dict | None = None):
    model = state.model
    payload = {
        "format": CHECKPOINT_FORMAT,
        "config": run_config or {},
        "model_config": model.config.to_dict(),
        "dtype": str(next(model.parameters()).dtype).removeprefix("torch."),
        "model": model.state_dict(),
        "optimizer": state.optimizer.state_dict(),
        "rng_state": state.generator.get_state(),
        "step": state.step,
        "sigma_sq": state.sigma_sq,
        "best_test_nll": state.best_test_nll,
        "epochs_since_best": state.epochs_since_best,
    }
    torch.save(payload, path)


def load_checkpoint(path, optimizer: str = "adam", learning_rate: float = 1e-3) -> TrainState:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    cfg = payload.get("config", {})
    model = build_model(ModelConfig(**payload["model_config"])).to(getattr(torch, payload["dtype"]))
    model.load_state_dict(payload["model"])
    opt = make_optimizer(cfg.get("optimizer", optimizer), model.parameters(), cfg.get("learning_rate", learning_rate))
    opt.load_state_dict(payload["optimizer"])
    gen = torch.Generator()
    gen.set_state(payload["rng_state"])
    state = TrainState(model=model, optimizer=opt, generator=gen, step=payload["step"],
                       best_test_nll=payload["best_test_nll"], epochs_since_best=payload["epochs_since_best"],
                       sigma_sq=payload["sigma_sq"], grad_clip=cfg.get("grad_clip", 10.0), run_config=cfg)
    return state
