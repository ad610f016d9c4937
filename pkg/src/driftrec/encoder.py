"""Causal self-attention encoder over processed histories.

Produces per-prefix hidden states (including a learned begin-of-sequence
state for the empty prefix) and a guidance vector taken from the last real
position. Causality keeps h_{n-1} a legitimate encoding of the history
without item n, which the counterfactual path relies on.
"""

from __future__ import annotations

import torch
import torch.nn as nn


class CausalSequenceEncoder(nn.Module):
    def __init__(self, d: int = 64, layers: int = 2, heads: int = 2,
                 dropout: float = 0.1, max_len: int = 50):
        super().__init__()
        if d % heads != 0:
            raise ValueError("d must be divisible by heads")
        self.d = d
        self.max_len = max_len
        self.bos = nn.Parameter(torch.zeros(d))
        self.pos_emb = nn.Embedding(max_len + 1, d)
        layer = nn.TransformerEncoderLayer(
            d_model=d, nhead=heads, dim_feedforward=4 * d, dropout=dropout,
            batch_first=True, norm_first=True)
        self.transformer = nn.TransformerEncoder(layer, num_layers=layers,
                                                 enable_nested_tensor=False)
        nn.init.normal_(self.bos, std=0.02)
        nn.init.normal_(self.pos_emb.weight, std=0.02)

    def forward(self, emb: torch.Tensor, lengths: torch.Tensor):
        """emb: [B, L, d] right-padded item embeddings; lengths: [B].

        Over-length input is left-truncated (most recent items kept).
        Returns (hidden [B, L+1, d] with index 0 = empty prefix,
        guidance [B, d] = hidden state at the last real position).
        """
        if emb.dim() == 2:
            emb = emb.unsqueeze(0)
            lengths = torch.as_tensor([emb.shape[1]], device=emb.device)
        B, L, _ = emb.shape
        if L > self.max_len:
            emb, lengths = _left_truncate(emb, lengths, self.max_len)
            L = self.max_len
        x = torch.cat([self.bos.expand(B, 1, self.d), emb], dim=1)
        positions = torch.arange(L + 1, device=emb.device)
        x = x + self.pos_emb(positions).unsqueeze(0)
        causal = torch.triu(torch.ones(L + 1, L + 1, dtype=torch.bool,
                                       device=emb.device), diagonal=1)
        pad = positions.unsqueeze(0) > lengths.unsqueeze(1)  # [B, L+1]
        hidden = self.transformer(x, mask=causal, src_key_padding_mask=pad)
        guidance = hidden[torch.arange(B, device=emb.device), lengths]
        return hidden, guidance


def _left_truncate(emb: torch.Tensor, lengths: torch.Tensor, max_len: int):
    """Keep the most recent max_len items of each sequence, repacked left."""
    B, L, d = emb.shape
    out = torch.zeros(B, max_len, d, dtype=emb.dtype, device=emb.device)
    new_lengths = torch.minimum(lengths, torch.full_like(lengths, max_len))
    for b in range(B):
        n = int(lengths[b])
        k = int(new_lengths[b])
        out[b, :k] = emb[b, n - k:n]
    return out, new_lengths
