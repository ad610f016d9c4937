"""Checkpoint persistence: binary parameter blob plus a JSON sidecar
carrying the config snapshot, vocabulary hash, epoch, metrics and seed."""

from __future__ import annotations

import json
from typing import Optional

import torch

from driftrec.config import ModelConfig, load_config
from driftrec.model import GuidedDiffusionRecommender


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path: str, model: GuidedDiffusionRecommender,
                    config: ModelConfig, vocab_hash: str, n_items: int,
                    epoch: int, val_metrics: dict, seed: int):
    torch.save(model.state_dict(), path)
    sidecar = {
        "config": config.to_dict(),
        "vocab_hash": vocab_hash,
        "n_items": n_items,
        "epoch": epoch,
        "val_metrics": val_metrics,
        "seed": seed,
    }
    with open(path + ".json", "w") as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)


def load_checkpoint(path: str, expected_vocab_hash: Optional[str] = None
                    ) -> tuple[GuidedDiffusionRecommender, ModelConfig, dict]:
    with open(path + ".json") as f:
        sidecar = json.load(f)
    if (expected_vocab_hash is not None
            and sidecar["vocab_hash"] != expected_vocab_hash):
        raise CheckpointError(
            f"vocabulary hash mismatch: checkpoint has "
            f"{sidecar['vocab_hash'][:12]}..., data has "
            f"{expected_vocab_hash[:12]}...")
    config = load_config(None, sidecar["config"])
    model = GuidedDiffusionRecommender(sidecar["n_items"], config)
    model.load_state_dict(torch.load(path, weights_only=True))
    model.eval()
    return model, config, sidecar
