"""Local continuity, entropy stability score, and the routing rule.

A sequence whose adjacent items are uniformly similar has a peaked-or-flat
continuity distribution with low-to-maximal entropy; a high entropy score
signals an interest shift and routes the sequence to the re-weighting path.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass

import numpy as np


class Verdict(enum.Enum):
    HIGH_STABILITY = "HighStability"
    LOW_STABILITY = "LowStability"


@dataclass
class StabilityReport:
    con: np.ndarray          # simplex over adjacent pairs, length L-1
    s_k: float               # entropy of con, in [0, ln(L-1)]
    verdict: Verdict


def compute_continuity(history_embeddings: np.ndarray) -> np.ndarray:
    """Softmax over pairs of the cosine similarity of adjacent items.

    history_embeddings: [L, d] with L >= 2. A zero-norm embedding makes its
    pair's cosine 0 (with a warning); that only happens on PAD misuse.
    """
    emb = np.asarray(history_embeddings, dtype=np.float64)
    if emb.ndim != 2 or emb.shape[0] < 2:
        raise ValueError("need at least two history embeddings")
    norms = np.linalg.norm(emb, axis=1)
    if np.any(norms == 0):
        warnings.warn("zero-norm embedding in continuity computation; "
                      "cosine set to 0 for affected pairs")
    a, b = emb[:-1], emb[1:]
    denom = norms[:-1] * norms[1:]
    sims = np.zeros(emb.shape[0] - 1)
    ok = denom > 0
    sims[ok] = np.sum(a * b, axis=1)[ok] / denom[ok]
    # stable softmax
    z = sims - sims.max()
    e = np.exp(z)
    return e / e.sum()


def stability_score(con: np.ndarray) -> float:
    """Entropy of the continuity distribution (natural log, 0*ln0 := 0)."""
    con = np.asarray(con, dtype=np.float64)
    nz = con[con > 0]
    return float(-(nz * np.log(nz)).sum())


def route(s_k: float, lambda_stb: float) -> Verdict:
    """High stability iff s_k <= lambda_stb (boundary inclusive)."""
    return Verdict.HIGH_STABILITY if s_k <= lambda_stb else Verdict.LOW_STABILITY


def analyze(history_embeddings: np.ndarray, lambda_stb: float) -> StabilityReport:
    con = compute_continuity(history_embeddings)
    s_k = stability_score(con)
    return StabilityReport(con=con, s_k=s_k, verdict=route(s_k, lambda_stb))
