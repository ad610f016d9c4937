"""Diagnostics: per-sequence stability reports, removal masks, PER records,
and optional static plots."""

from __future__ import annotations

import json
import os
from typing import Optional

import numpy as np
import torch

from driftrec.counterfactual import reweight_sequence
from driftrec.data import InteractionSequence
from driftrec.model import GuidedDiffusionRecommender
from driftrec.rng import seeded_rng
from driftrec.stability import Verdict


@torch.no_grad()
def inspect_sequence(model: GuidedDiffusionRecommender,
                     seq: InteractionSequence, seed: int) -> dict:
    """Deterministic per-sequence diagnostic record."""
    model.eval()
    cfg = model.config
    history = seq.history[-cfg.max_history_len:]
    report = model.stability_report(history)
    out = {
        "user_id": seq.user_id,
        "con": [float(c) for c in report.con],
        "s_k": float(report.s_k),
        "verdict": report.verdict.value,
    }
    if report.verdict is Verdict.HIGH_STABILITY:
        from driftrec.dts import dts_simplify
        rng = seeded_rng(seed, f"inspect-dts-{seq.user_id}")
        kept, mask = dts_simplify(history, report.con, model.dts_params, rng)
        out["kept"] = kept
        out["removal_mask"] = [bool(m) for m in mask]
    else:
        emb, lengths = model._pad_embed([history])
        hidden, _ = model.encoder(emb, lengths)
        ws = reweight_sequence(emb[0], hidden[0], model.aux_predictor,
                               cfg.W, cfg.T,
                               candidate_top_m=cfg.per_candidate_top_m,
                               con=report.con)
        out["weights"] = [float(w) for w in ws.weights]
        out["per_records"] = [r.__dict__ for r in ws.records]
    return out


def inspect_corpus(model, sequences, seed: int, out_path: Optional[str] = None
                   ) -> list[dict]:
    records = [inspect_sequence(model, seq, seed) for seq in sequences]
    if out_path:
        with open(out_path, "w") as f:
            for rec in records:
                f.write(json.dumps(rec, sort_keys=True) + "\n")
    return records


def emit_plots(records: list[dict], out_dir: str,
               epoch_log_path: Optional[str] = None,
               labels: Optional[dict[str, list[str]]] = None):
    """Static PNGs: loss curves, weight histogram, PER-vs-label scatter."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    os.makedirs(out_dir, exist_ok=True)

    if epoch_log_path and os.path.exists(epoch_log_path):
        epochs, ld, la = [], [], []
        with open(epoch_log_path) as f:
            for line in f:
                rec = json.loads(line)
                epochs.append(rec["epoch"])
                ld.append(rec["loss_diffusion"])
                la.append(rec["loss_aux"])
        fig, ax = plt.subplots()
        ax.plot(epochs, ld, label="diffusion loss")
        ax.plot(epochs, la, label="aux loss")
        ax.set_xlabel("epoch")
        ax.legend()
        fig.savefig(os.path.join(out_dir, "loss_curves.png"))
        plt.close(fig)

    weights = [w for rec in records for w in rec.get("weights", [])]
    if weights:
        fig, ax = plt.subplots()
        ax.hist(weights, bins=40)
        ax.set_xlabel("item weight")
        fig.savefig(os.path.join(out_dir, "weight_histogram.png"))
        plt.close(fig)

    if labels:
        pers, colors = [], []
        palette = {"regular": 0, "bridge": 1, "noise": 2}
        for rec in records:
            lab = labels.get(rec["user_id"])
            if lab is None:
                continue
            for pr in rec.get("per_records", []):
                pos = pr["position"] - 1
                if pos < len(lab):
                    pers.append(pr["per"])
                    colors.append(palette[lab[pos]])
        if pers:
            fig, ax = plt.subplots()
            ax.scatter(np.arange(len(pers)), pers, c=colors, s=8, cmap="viridis")
            ax.set_ylabel("prediction error reduction")
            fig.savefig(os.path.join(out_dir, "per_vs_label.png"))
            plt.close(fig)
