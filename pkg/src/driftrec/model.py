"""Full model: item embedding table, sequence encoder, auxiliary future
predictor, denoiser, and the shared per-sequence processing pipeline
(route -> simplify or re-weight -> encode)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
import torch.nn as nn

from driftrec import stability
from driftrec.config import ModelConfig
from driftrec.counterfactual import batch_weights
from driftrec.diffusion import Denoiser, NoiseSchedule
from driftrec.dts import DtsParams, dts_simplify
from driftrec.encoder import CausalSequenceEncoder
from driftrec.stability import Verdict

PAD_IDX = 0
PHI_IDX = 1
N_SPECIAL = 2


class ItemEmbeddingTable(nn.Module):
    """Embeddings for all items plus PAD (row 0, frozen at zero) and the
    learned null-guidance token (row 1). Item index i lives at row i+2."""

    def __init__(self, n_items: int, d: int):
        super().__init__()
        self.n_items = n_items
        self.d = d
        self.emb = nn.Embedding(n_items + N_SPECIAL, d, padding_idx=PAD_IDX)
        nn.init.normal_(self.emb.weight, std=0.5)
        with torch.no_grad():
            self.emb.weight[PAD_IDX].zero_()

    def forward(self, item_idx: torch.Tensor) -> torch.Tensor:
        """Item indices (0-based, PAD as -1 allowed via clamp path not used);
        offsets into the table past the special rows."""
        return self.emb(item_idx + N_SPECIAL)

    @property
    def phi(self) -> torch.Tensor:
        return self.emb.weight[PHI_IDX]

    @property
    def pad(self) -> torch.Tensor:
        return self.emb.weight[PAD_IDX]

    def item_matrix(self) -> torch.Tensor:
        """[n_items, d] view of the item rows (no specials)."""
        return self.emb.weight[N_SPECIAL:]


@dataclass
class ProcessedBatch:
    guidance: torch.Tensor            # [B, d]
    verdicts: list[Verdict]
    reports: list[stability.StabilityReport]
    removal_masks: list[Optional[np.ndarray]]
    weights: list[Optional[torch.Tensor]]
    aux_hidden: Optional[torch.Tensor]    # low-group hidden states
    aux_emb: Optional[torch.Tensor]       # low-group embeddings
    aux_lengths: Optional[torch.Tensor]
    n_low: int
    n_dts: int


class GuidedDiffusionRecommender(nn.Module):
    def __init__(self, n_items: int, config: ModelConfig):
        super().__init__()
        self.config = config
        self.items = ItemEmbeddingTable(n_items, config.d)
        self.encoder = CausalSequenceEncoder(
            d=config.d, layers=config.encoder_layers, heads=config.encoder_heads,
            dropout=config.encoder_dropout, max_len=config.max_history_len)
        self.aux_predictor = nn.Sequential(
            nn.Linear(config.d, config.d), nn.SiLU(),
            nn.Linear(config.d, config.d))
        self.denoiser = Denoiser(config.d)
        self.schedule = NoiseSchedule.linear(
            config.tau_S, config.beta_start, config.beta_end)
        self.dts_params = DtsParams(
            alpha0=config.dts_alpha0, beta0=config.dts_beta0,
            max_removal_frac=config.dts_max_removal_frac,
            min_history=config.dts_min_history)
        # optional frozen snapshot for stability routing
        self._routing_snapshot: Optional[np.ndarray] = None

    # -- routing ----------------------------------------------------------

    def routing_matrix(self) -> np.ndarray:
        if self.config.freeze_stability_embeddings:
            if self._routing_snapshot is None:
                self._routing_snapshot = (
                    self.items.item_matrix().detach().cpu().numpy().copy())
            return self._routing_snapshot
        return self.items.item_matrix().detach().cpu().numpy()

    def stability_report(self, history: list[int],
                         matrix: Optional[np.ndarray] = None) -> stability.StabilityReport:
        m = self.routing_matrix() if matrix is None else matrix
        return stability.analyze(m[history], self.config.lambda_stb)

    # -- batched pipeline -------------------------------------------------

    def process_histories(self, histories: list[list[int]],
                          dts_rng: np.random.Generator,
                          variant: str = "full") -> ProcessedBatch:
        """Route each history, simplify or re-weight it, and encode.

        variant: 'full' routes by stability; 'no_routing' sends every
        sequence down the counterfactual path; 'no_attention' sends every
        sequence down the simplification path.
        """
        cfg = self.config
        histories = [h[-cfg.max_history_len:] for h in histories]
        matrix = self.routing_matrix()
        reports = [stability.analyze(matrix[h], cfg.lambda_stb)
                   for h in histories]
        if variant == "full":
            verdicts = [r.verdict for r in reports]
        elif variant == "no_routing":
            verdicts = [Verdict.LOW_STABILITY] * len(histories)
        elif variant == "no_attention":
            verdicts = [Verdict.HIGH_STABILITY] * len(histories)
        else:
            raise ValueError(f"unknown variant: {variant}")

        B = len(histories)
        removal_masks: list[Optional[np.ndarray]] = [None] * B
        weights: list[Optional[torch.Tensor]] = [None] * B
        guidance = [None] * B

        high = [i for i, v in enumerate(verdicts) if v is Verdict.HIGH_STABILITY]
        low = [i for i, v in enumerate(verdicts) if v is Verdict.LOW_STABILITY]
        n_dts = 0

        if high:
            processed = []
            for i in high:
                kept, mask = dts_simplify(histories[i], reports[i].con,
                                          self.dts_params, dts_rng)
                n_dts += 1
                removal_masks[i] = mask
                processed.append([histories[i][k] for k in kept])
            emb, lengths = self._pad_embed(processed)
            _, g_high = self.encoder(emb, lengths)
            for j, i in enumerate(high):
                guidance[i] = g_high[j]

        aux_hidden = aux_emb = aux_lengths = None
        if low:
            emb, lengths = self._pad_embed([histories[i] for i in low])
            hidden, _ = self.encoder(emb, lengths)
            candidate_mask = self._candidate_mask(low, reports, emb, lengths)
            w = batch_weights(hidden, emb, lengths, self.aux_predictor,
                              cfg.W, cfg.T, candidate_mask)
            _, g_low = self.encoder(emb * w.unsqueeze(-1), lengths)
            for j, i in enumerate(low):
                guidance[i] = g_low[j]
                weights[i] = w[j, :len(histories[i])]
            aux_hidden, aux_emb, aux_lengths = hidden, emb, lengths

        return ProcessedBatch(
            guidance=torch.stack(guidance), verdicts=verdicts, reports=reports,
            removal_masks=removal_masks, weights=weights,
            aux_hidden=aux_hidden, aux_emb=aux_emb, aux_lengths=aux_lengths,
            n_low=len(low), n_dts=n_dts)

    def _candidate_mask(self, low, reports, emb, lengths):
        m = self.config.per_candidate_top_m
        if m is None:
            return None
        from driftrec.counterfactual import _top_m_candidates
        B, L, _ = emb.shape
        mask = torch.zeros(B, L, dtype=torch.bool)
        for j, i in enumerate(low):
            con = torch.as_tensor(reports[i].con, dtype=emb.dtype)
            n = int(lengths[j])
            mask[j, :n] = _top_m_candidates(con, n, m)
        return mask

    def _pad_embed(self, histories: list[list[int]]):
        lengths = torch.tensor([len(h) for h in histories])
        L = int(lengths.max())
        idx = torch.full((len(histories), L), -N_SPECIAL, dtype=torch.long)
        for b, h in enumerate(histories):
            idx[b, :len(h)] = torch.tensor(h, dtype=torch.long)
        # -N_SPECIAL offsets back to the PAD row inside the table
        return self.items(idx), lengths

    def zero_pad_row(self):
        with torch.no_grad():
            self.items.emb.weight[PAD_IDX].zero_()
