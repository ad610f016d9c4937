"""Counterfactual re-weighting for low-stability sequences.

An item's importance is its prediction-error reduction (PER): how much
including it improves an auxiliary prediction of the average embedding of
the next W items. PER > 0 marks a turning point (weight > 1), PER < 0 a
noisy item (weight < 1). Weights are detached before being applied so the
encoder cannot game them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch


@dataclass
class PerRecord:
    position: int          # 1-based position within the history
    loss_without: float
    loss_with: float
    per: float
    weight: float


@dataclass
class WeightedSequence:
    embeddings: torch.Tensor   # [L, d], weights already applied
    weights: torch.Tensor      # [L]
    records: list[PerRecord]


def future_window_target(history_embeddings: torch.Tensor, n: int,
                         W: int) -> Optional[torch.Tensor]:
    """Mean of the embeddings at positions n+1 .. min(n+W, L); None when
    the window is empty (n at the end of the history). n is 1-based."""
    L = history_embeddings.shape[0]
    if not (1 <= n <= L):
        raise ValueError(f"position {n} outside history of length {L}")
    if n >= L:
        return None
    end = min(n + W, L)
    return history_embeddings[n:end].mean(dim=0)


def compute_per(h_prev: torch.Tensor, h_curr: torch.Tensor,
                target: torch.Tensor, aux_predictor) -> torch.Tensor:
    """Loss without the item minus loss with it (squared Euclidean)."""
    loss_without = ((aux_predictor(h_prev) - target) ** 2).sum()
    loss_with = ((aux_predictor(h_curr) - target) ** 2).sum()
    return loss_without - loss_with


def per_to_weight(per, T: float):
    """w = 1 + tanh(per / T), in the open interval (0, 2)."""
    if T <= 0:
        raise ValueError("temperature T must be > 0")
    if isinstance(per, torch.Tensor):
        return 1.0 + torch.tanh(per / T)
    import math
    return 1.0 + math.tanh(per / T)


def _window_means(emb: torch.Tensor, lengths: torch.Tensor, W: int):
    """Batched future-window means.

    emb: [B, L, d] right-padded, lengths: [B].
    Returns (targets [B, L, d], valid [B, L]) where targets[b, i] is the
    mean embedding of positions i+1 .. min(i+W, len_b) (0-based i) and
    valid marks positions with a non-empty window.
    """
    B, L, d = emb.shape
    idx = torch.arange(L, device=emb.device)
    sums = torch.zeros_like(emb)
    counts = torch.zeros(B, L, device=emb.device, dtype=emb.dtype)
    for j in range(1, W + 1):
        in_range = (idx.unsqueeze(0) + j) < lengths.unsqueeze(1)  # [B, L]
        shifted = torch.zeros_like(emb)
        if j < L:
            shifted[:, :L - j] = emb[:, j:]
        sums = sums + shifted * in_range.unsqueeze(-1)
        counts = counts + in_range.to(emb.dtype)
    valid = counts > 0
    targets = sums / counts.clamp(min=1).unsqueeze(-1)
    return targets, valid


def batch_per(hidden: torch.Tensor, emb: torch.Tensor, lengths: torch.Tensor,
              aux_predictor, W: int):
    """Per-position PER for a padded batch.

    hidden: [B, L+1, d] with hidden[:, 0] the empty-prefix state, so
    hidden[:, i+1] encodes the history through 0-based position i.
    Returns (per [B, L], loss_without [B, L], loss_with [B, L], valid [B, L]).
    """
    targets, valid = _window_means(emb, lengths, W)
    preds = aux_predictor(hidden)  # [B, L+1, d]
    loss_without = ((preds[:, :-1] - targets) ** 2).sum(dim=-1)
    loss_with = ((preds[:, 1:] - targets) ** 2).sum(dim=-1)
    per = loss_without - loss_with
    return per, loss_without, loss_with, valid


def batch_weights(hidden: torch.Tensor, emb: torch.Tensor,
                  lengths: torch.Tensor, aux_predictor, W: int, T: float,
                  candidate_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Detached per-position weights [B, L]; positions without a future
    window (and non-candidates, if a mask is given) get weight 1."""
    with torch.no_grad():
        per, _, _, valid = batch_per(hidden, emb, lengths, aux_predictor, W)
        active = valid if candidate_mask is None else valid & candidate_mask
        weights = torch.where(active, per_to_weight(per, T),
                              torch.ones_like(per))
    return weights


def reweight_sequence(history_embeddings: torch.Tensor, hidden_states: torch.Tensor,
                      aux_predictor, W: int, T: float,
                      candidate_top_m: Optional[int] = None,
                      con=None) -> WeightedSequence:
    """Single-sequence re-weighting with full diagnostics.

    hidden_states: [L+1, d] including the empty-prefix state at index 0.
    candidate_top_m restricts PER to the m positions with the lowest
    adjacent continuity (requires con); all others keep weight 1.
    """
    emb = history_embeddings.unsqueeze(0)
    hidden = hidden_states.unsqueeze(0)
    L = emb.shape[1]
    lengths = torch.tensor([L], device=emb.device)
    candidate_mask = None
    if candidate_top_m is not None:
        if con is None:
            raise ValueError("candidate filtering requires continuity values")
        candidate_mask = _top_m_candidates(torch.as_tensor(con, dtype=emb.dtype),
                                           L, candidate_top_m).unsqueeze(0)
    with torch.no_grad():
        per, loss_wo, loss_w, valid = batch_per(hidden, emb, lengths,
                                                aux_predictor, W)
        active = valid if candidate_mask is None else valid & candidate_mask
        weights = torch.where(active, per_to_weight(per, T),
                              torch.ones_like(per))[0]
    records = []
    for i in range(L):
        if active[0, i]:
            records.append(PerRecord(position=i + 1,
                                     loss_without=float(loss_wo[0, i]),
                                     loss_with=float(loss_w[0, i]),
                                     per=float(per[0, i]),
                                     weight=float(weights[i])))
    weighted = history_embeddings * weights.unsqueeze(-1)
    return WeightedSequence(embeddings=weighted, weights=weights, records=records)


def _top_m_candidates(con: torch.Tensor, L: int, m: int) -> torch.Tensor:
    """Positions adjacent to the m lowest-continuity pairs (pair i links
    positions i and i+1)."""
    mask = torch.zeros(L, dtype=torch.bool)
    order = torch.argsort(con)[:m]
    for i in order.tolist():
        mask[i] = True
        if i + 1 < L:
            mask[i + 1] = True
    return mask


def aux_loss(hidden: torch.Tensor, emb: torch.Tensor, lengths: torch.Tensor,
             aux_predictor, W: int) -> torch.Tensor:
    """Mean over valid positions of the future-window prediction error.

    Accepts a single sequence (hidden [L+1, d], emb [L, d]) or a padded
    batch (hidden [B, L+1, d], emb [B, L, d]). Differentiable in the aux
    predictor and encoder parameters.
    """
    if hidden.dim() == 2:
        hidden, emb = hidden.unsqueeze(0), emb.unsqueeze(0)
        lengths = torch.as_tensor([emb.shape[1]]) if lengths is None else lengths
    targets, valid = _window_means(emb, lengths, W)
    preds = aux_predictor(hidden)[:, 1:]  # prediction from h_n (with the item)
    errors = ((preds - targets) ** 2).sum(dim=-1)
    n_valid = valid.sum()
    if n_valid == 0:
        raise ValueError("no position has a non-empty future window")
    return (errors * valid.to(errors.dtype)).sum() / n_valid.to(errors.dtype)
