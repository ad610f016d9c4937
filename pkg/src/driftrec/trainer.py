"""Training loop: route -> simplify or re-weight -> encode -> diffuse,
joint optimization of the diffusion and auxiliary losses, ablation runs."""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from driftrec.config import ModelConfig
from driftrec.counterfactual import aux_loss
from driftrec.data import InteractionSequence, Split, TrainSample, split_leave_one_out
from driftrec.diffusion import diffusion_loss
from driftrec.evaluate import aggregate, evaluate_split
from driftrec.model import GuidedDiffusionRecommender
from driftrec.rng import seeded_rng, torch_generator


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainState:
    epoch: int = 0
    step: int = 0
    dts_calls: int = 0
    per_passes: int = 0
    n_sequences: int = 0
    best_val_hr: float = -1.0
    best_epoch: int = -1

    def reset_epoch_counters(self):
        self.dts_calls = 0
        self.per_passes = 0
        self.n_sequences = 0


@dataclass
class EpochRecord:
    epoch: int
    loss_diffusion: float
    loss_aux: float
    per_passes: int
    dts_calls: int
    low_stability_fraction: float
    val_hr: float
    val_ndcg: float

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True)


class Trainer:
    def __init__(self, sequences: list[InteractionSequence], n_items: int,
                 config: ModelConfig, out_dir: str | None = None,
                 variant: str = "full"):
        self.config = config
        self.variant = variant
        self.out_dir = out_dir
        self.split: Split = split_leave_one_out(sequences)
        self.full_items = {s.user_id: s.items for s in sequences}
        torch.manual_seed(config.seed)
        torch.set_num_threads(min(4, torch.get_num_threads()))
        self.model = GuidedDiffusionRecommender(n_items, config)
        self.optimizer = torch.optim.Adam(self.model.parameters(),
                                          lr=config.learning_rate)
        self.state = TrainState()
        self.noise_gen = torch_generator(config.seed, "diffusion-noise")
        self.drop_rng = seeded_rng(config.seed, "cond-dropout")
        self.epoch_records: list[EpochRecord] = []
        self.epoch_train_seconds: list[float] = []
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)

    # -- single optimization step ----------------------------------------

    def train_step(self, batch: list[TrainSample],
                   dts_rng: np.random.Generator) -> tuple[float, float]:
        cfg = self.config
        self.model.train()
        processed = self.model.process_histories(
            [s.history for s in batch], dts_rng, variant=self.variant)

        targets = torch.tensor([s.target for s in batch])
        e0 = self.model.items(targets)
        loss_diff = diffusion_loss(
            self.model.denoiser, e0, processed.guidance, self.model.items.phi,
            self.model.schedule, cfg.cond_dropout_p, self.noise_gen,
            self.drop_rng)

        if processed.aux_hidden is not None and cfg.lambda_aux > 0:
            loss_aux = aux_loss(processed.aux_hidden, processed.aux_emb,
                                processed.aux_lengths, self.model.aux_predictor,
                                cfg.W)
        else:
            loss_aux = torch.zeros(())

        loss = loss_diff + cfg.lambda_aux * loss_aux
        if not torch.isfinite(loss):
            self._dump_bad_batch(batch)
            raise TrainingDiverged(
                f"non-finite loss at epoch {self.state.epoch} "
                f"step {self.state.step}")

        self.optimizer.zero_grad()
        loss.backward()
        self.optimizer.step()
        self.model.zero_pad_row()

        self.state.step += 1
        self.state.dts_calls += processed.n_dts
        self.state.per_passes += processed.n_low
        self.state.n_sequences += len(batch)
        return float(loss_diff.detach()), float(loss_aux.detach())

    def _dump_bad_batch(self, batch):
        if self.out_dir:
            path = os.path.join(self.out_dir, "diverged_batch.json")
            with open(path, "w") as f:
                json.dump([{"user_id": s.user_id, "history": s.history,
                            "target": s.target} for s in batch], f)

    # -- full loop --------------------------------------------------------

    def train(self) -> list[EpochRecord]:
        cfg = self.config
        samples = self.split.train
        if not samples:
            raise ValueError("no training samples after splitting")
        log_path = (os.path.join(self.out_dir, "epoch_log.jsonl")
                    if self.out_dir else None)
        log_f = open(log_path, "w") if log_path else None
        epochs_since_best = 0
        try:
            for epoch in range(1, cfg.epochs + 1):
                self.state.epoch = epoch
                self.state.reset_epoch_counters()
                shuffle_rng = seeded_rng(cfg.seed, f"shuffle-{epoch}")
                dts_rng = seeded_rng(cfg.seed, f"dts-{epoch}")
                order = shuffle_rng.permutation(len(samples))
                t0 = time.perf_counter()
                diff_losses, aux_losses = [], []
                for start in range(0, len(order), cfg.batch_size):
                    batch = [samples[i] for i in order[start:start + cfg.batch_size]]
                    ld, la = self.train_step(batch, dts_rng)
                    diff_losses.append(ld)
                    aux_losses.append(la)
                self.epoch_train_seconds.append(time.perf_counter() - t0)

                val = evaluate_split(self.split.valid, self.full_items,
                                     self.model, cfg, cfg.seed,
                                     variant=self.variant)
                val_report = aggregate([val])
                record = EpochRecord(
                    epoch=epoch,
                    loss_diffusion=float(np.mean(diff_losses)),
                    loss_aux=float(np.mean(aux_losses)),
                    per_passes=self.state.per_passes,
                    dts_calls=self.state.dts_calls,
                    low_stability_fraction=(self.state.per_passes
                                            / max(self.state.n_sequences, 1)),
                    val_hr=val_report["hr"]["mean"],
                    val_ndcg=val_report["ndcg"]["mean"])
                self.epoch_records.append(record)
                if log_f:
                    log_f.write(record.to_json() + "\n")
                    log_f.flush()

                if record.val_hr > self.state.best_val_hr:
                    self.state.best_val_hr = record.val_hr
                    self.state.best_epoch = epoch
                    epochs_since_best = 0
                    self._save_best()
                else:
                    epochs_since_best += 1
                    if epochs_since_best >= cfg.patience:
                        break
        finally:
            if log_f:
                log_f.close()
        self._write_timing_report()
        return self.epoch_records

    def _save_best(self):
        if self.out_dir:
            torch.save(self.model.state_dict(),
                       os.path.join(self.out_dir, "best.params"))

    def restore_best(self):
        path = os.path.join(self.out_dir, "best.params") if self.out_dir else None
        if path and os.path.exists(path):
            self.model.load_state_dict(torch.load(path, weights_only=True))

    def _write_timing_report(self):
        # timing lives outside the epoch log so logs stay byte-reproducible
        if self.out_dir:
            with open(os.path.join(self.out_dir, "timing.json"), "w") as f:
                json.dump({
                    "epoch_train_seconds": self.epoch_train_seconds,
                    "mean_epoch_seconds": float(np.mean(self.epoch_train_seconds))
                    if self.epoch_train_seconds else 0.0,
                }, f, indent=2)

    def evaluate_test(self, seed: int | None = None):
        self.restore_best()
        return evaluate_split(self.split.test, self.full_items, self.model,
                              self.config, seed or self.config.seed,
                              variant=self.variant)


VARIANTS = ("full", "no_routing", "no_attention")


def run_variant(sequences, n_items, config: ModelConfig, variant: str,
                out_dir: str | None = None):
    """Train and test-evaluate one pipeline variant; returns
    (trainer, ranking results)."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant: {variant}")
    trainer = Trainer(sequences, n_items, config, out_dir=out_dir,
                      variant=variant)
    trainer.train()
    results = trainer.evaluate_test()
    return trainer, results


def run_ablation(sequences, n_items, config: ModelConfig,
                 variants: list[str], seeds: list[int],
                 out_dir: str | None = None) -> dict:
    """Train and evaluate each variant over the given seeds; returns
    {variant: aggregated metrics report}."""
    reports = {}
    for variant in variants:
        runs = []
        for seed in seeds:
            cfg = config.replace(seed=seed)
            v_dir = (os.path.join(out_dir, f"{variant}_seed{seed}")
                     if out_dir else None)
            _, results = run_variant(sequences, n_items, cfg, variant, v_dir)
            runs.append(results)
        reports[variant] = aggregate(runs)
    if out_dir:
        with open(os.path.join(out_dir, "ablation_report.json"), "w") as f:
            json.dump(reports, f, indent=2)
    return reports
