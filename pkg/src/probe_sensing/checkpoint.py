"""Checkpoint files: torch-native payload plus a JSON sidecar listing tensor names and shapes."""

from __future__ import annotations

import json
from pathlib import Path

import torch

from .errors import ContractError
from .model import ModelConfig, SensingAreaNet


def save_checkpoint(path, model, *, optimizer=None, train_config=None, seed=0, epoch=-1, step=0,
                    best_val_error_2d=None, norm_stats=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    state = model.state_dict()
    payload = {
        "model_state": state,
        "model_config": model.cfg.to_dict(),
        "train_config": train_config,
        "seed": seed,
        "epoch": epoch,
        "step": step,
        "best_val_error_2d": best_val_error_2d,
        "norm_stats": norm_stats,
        "optimizer_state": optimizer.state_dict() if optimizer is not None else None,
        "torch_rng_state": torch.get_rng_state(),
    }
    torch.save(payload, path)
    tensors = {name: list(t.shape) for name, t in state.items()}
    sidecar = {"model_config": payload["model_config"], "seed": seed, "epoch": epoch, "tensors": tensors}
    path.with_suffix(".tensors.json").write_text(json.dumps(sidecar, indent=1, sort_keys=True))
    return path


def load_checkpoint(path):
    """Returns (model, payload). The model is in eval mode."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint {path} not found")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    try:
        cfg = ModelConfig.from_dict(payload["model_config"])
    except (KeyError, TypeError) as e:
        raise ContractError(f"{path} is not a model checkpoint: {e!r}") from None
    model = SensingAreaNet(cfg)
    model.load_state_dict(payload["model_state"])
    model.eval()
    return model, payload
