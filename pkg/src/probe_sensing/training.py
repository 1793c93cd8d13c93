"""Loss, learning-rate schedule, the training loop and the overfit sanity probe."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import dataio
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, TrainingDivergedError
from .evaluation import predict_pixels, score_batch
from .model import ModelConfig, build_model

log = logging.getLogger(__name__)

LOSS_SPACES = ("normalized", "pixel")


@dataclass
class TrainConfig:
    batch_size: int = 8
    epochs: int = 50
    lr_initial: float = 1e-4
    lr_final: float = 8e-5
    seed: int = 0
    checkpoint_every: int = 1
    target_size: int = dataio.DEFAULT_TARGET_SIZE
    loss_space: str = "normalized"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.lr_final > self.lr_initial:
            raise ConfigError("lr_final must not exceed lr_initial")
        if self.loss_space not in LOSS_SPACES:
            raise ConfigError(f"loss_space must be one of {LOSS_SPACES}")
        if self.target_size % 32:
            raise ConfigError("target_size must be divisible by 32")

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainState:
    epoch: int = -1  # last completed epoch
    step: int = 0
    best_val_error_2d: float = math.inf


def lr_at(epoch, cfg: TrainConfig):
    """Linear decay from lr_initial at epoch 0 to lr_final at the last epoch."""
    if cfg.epochs == 1:
        return cfg.lr_initial
    frac = epoch / (cfg.epochs - 1)
    return cfg.lr_initial + (cfg.lr_final - cfg.lr_initial) * frac


def loss_fn(pred, target):
    """Mean over the batch of the squared Euclidean distance."""
    return ((pred - target) ** 2).sum(dim=-1).mean()


def batch_loss(model, batch: dataio.Batch, loss_space="normalized"):
    dtype = next(model.parameters()).dtype
    images, depths, axes, targets = batch.tensors(dtype)
    pred = model(images, depths, axes)
    if loss_space == "pixel":
        return loss_fn(pred * batch.square_size, targets * batch.square_size)
    return loss_fn(pred, targets)


def epoch_order(seed, epoch, n):
    return np.random.default_rng([seed, epoch]).permutation(n)


def validate(model, batch, samples):
    preds = predict_pixels(model, batch)
    _, agg = score_batch(samples, preds)
    return agg["2d"]["mean"], agg["3d"]["mean"]


def _check_dataset(manifest, model_cfg, train_samples):
    if not train_samples:
        raise ConfigError("training split is empty")
    if not manifest.norm_stats:
        raise ConfigError("manifest has no normalization statistics")
    n_points = len(train_samples[0].axis.points)
    if n_points != model_cfg.n_axis_points:
        raise ConfigError(f"dataset has {n_points} axis points, model expects {model_cfg.n_axis_points}")
    if train_samples[0].rig != manifest.rig:
        raise ConfigError("sample rig does not match the manifest rig")


def train(model_cfg: ModelConfig, train_cfg: TrainConfig, data_dir, out_dir, resume=None, stop_after_epoch=None):
    """Train and write ``train_log.jsonl``, ``last.pt`` and ``best.pt`` into ``out_dir``.

    ``resume`` is a checkpoint written by an earlier run with the same configs;
    training continues after its epoch. ``stop_after_epoch`` ends the run early
    (used to produce resumable partial runs). Returns the list of log records.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = dataio.load_manifest(data_dir)
    train_samples = dataio.load_split(data_dir, "train")
    val_samples = dataio.load_split(data_dir, "val") if manifest.splits.get("val") else []
    _check_dataset(manifest, model_cfg, train_samples)
    stats = manifest.norm_stats
    train_batch = dataio.make_batch(train_samples, train_cfg.target_size, stats)
    val_batch = dataio.make_batch(val_samples, train_cfg.target_size, stats) if val_samples else None

    model = build_model(model_cfg, seed=train_cfg.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=train_cfg.lr_initial)
    state = TrainState()
    if resume is not None:
        resumed, payload = load_checkpoint(resume)
        if resumed.cfg != model_cfg or payload["train_config"] != train_cfg.to_dict():
            raise ConfigError(f"checkpoint {resume} was written with a different configuration")
        model.load_state_dict(payload["model_state"])
        optimizer.load_state_dict(payload["optimizer_state"])
        torch.set_rng_state(payload["torch_rng_state"])
        best = payload["best_val_error_2d"]
        state = TrainState(payload["epoch"], payload["step"], math.inf if best is None else best)

    log_path = out_dir / "train_log.jsonl"
    records = []
    ckpt_kwargs = dict(train_config=train_cfg.to_dict(), seed=train_cfg.seed, norm_stats=stats)
    last_epoch = train_cfg.epochs - 1 if stop_after_epoch is None else min(stop_after_epoch, train_cfg.epochs - 1)
    n = len(train_batch)
    for epoch in range(state.epoch + 1, last_epoch + 1):
        t0 = time.perf_counter()
        lr = lr_at(epoch, train_cfg)
        for group in optimizer.param_groups:
            group["lr"] = lr
        model.train()
        order = epoch_order(train_cfg.seed, epoch, n)
        total, count = 0.0, 0
        for start in range(0, n, train_cfg.batch_size):
            batch = train_batch.subset(order[start:start + train_cfg.batch_size])
            loss = batch_loss(model, batch, train_cfg.loss_space)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}, step {state.step}, lr {lr:.3g}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            state.step += 1
            total += loss.item() * len(batch)
            count += len(batch)
        state.epoch = epoch

        if val_batch is not None:
            val_2d, val_3d = validate(model, val_batch, val_samples)
        else:
            val_2d, val_3d = validate(model, train_batch, train_samples)
        record = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": total / count,
            "val_2d_mean": val_2d,
            "val_3d_mean": None if math.isnan(val_3d) else val_3d,
            "wall_time": time.perf_counter() - t0,
        }
        records.append(record)
        with open(log_path, "a") as f:
            f.write(json.dumps(record) + "\n")
        log.info("epoch %d lr %.3g loss %.6f val2d %.2f", epoch, lr, record["train_loss"], val_2d)

        if val_2d < state.best_val_error_2d:
            state.best_val_error_2d = val_2d
            save_checkpoint(out_dir / "best.pt", model, optimizer=optimizer, epoch=epoch, step=state.step,
                            best_val_error_2d=val_2d, **ckpt_kwargs)
        if (epoch + 1) % train_cfg.checkpoint_every == 0 or epoch == last_epoch:
            save_checkpoint(out_dir / "last.pt", model, optimizer=optimizer, epoch=epoch, step=state.step,
                            best_val_error_2d=state.best_val_error_2d, **ckpt_kwargs)
    return records


def read_log(path):
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


@dataclass
class OverfitResult:
    initial_error: float
    final_error: float
    losses: list = field(default_factory=list)


def overfit_probe(model_cfg: ModelConfig, samples, steps=300, seed=0, target_size=256, lr=1e-4,
                  norm_stats=None, n_samples=8):
    """Fit ``n_samples`` samples with full-batch Adam steps and report the mean 2-D pixel error
    on those same samples (eval mode) before and after."""
    samples = list(samples)[:n_samples]
    if norm_stats is None:
        norm_stats = dataio.compute_norm_stats(samples)
    batch = dataio.make_batch(samples, target_size, norm_stats)
    model = build_model(model_cfg, seed=seed)
    initial, _ = validate(model, batch, samples)
    optimizer = torch.optim.Adam(model.parameters(), lr=lr)
    losses = []
    for step in range(steps):
        model.train()
        loss = batch_loss(model, batch)
        if not torch.isfinite(loss):
            raise TrainingDivergedError(f"non-finite loss at step {step}")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        losses.append(loss.item())
    final, _ = validate(model, batch, samples)
    return OverfitResult(initial, final, losses)
