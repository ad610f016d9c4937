"""Dual-side Thompson sampling simplifier for high-stability sequences.

An interior item is redundant when both of its adjacent continuity values
are high. Each side's continuity acts as Bernoulli evidence for a Beta
posterior; the item is removed only when samples from both posteriors agree
(dual-side agreement). Endpoints are always kept, and removal is capped by
max_removal_frac and min_history.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class DtsParams:
    alpha0: float = 1.0
    beta0: float = 1.0
    max_removal_frac: float = 0.3
    min_history: int = 2

    def __post_init__(self):
        if self.alpha0 <= 0 or self.beta0 <= 0:
            raise ValueError("Beta priors must be positive")
        if not (0.0 <= self.max_removal_frac < 1.0):
            raise ValueError("max_removal_frac must be in [0,1)")
        if self.min_history < 2:
            raise ValueError("min_history must be >= 2")


# pseudo-count scale: keeps posteriors responsive at history lengths ~10-50
KAPPA = 10.0


def dts_simplify(history_embeddings, con: np.ndarray, params: DtsParams,
                 rng: np.random.Generator) -> tuple[list[int], np.ndarray]:
    """Return (kept indices in original order, boolean removal mask).

    For interior item i (0-based, 1..L-2) with side evidence con[i-1] and
    con[i], draw theta ~ Beta(alpha0 + e*kappa, beta0 + (1-e)*kappa) per
    side; the item is a removal candidate iff min(theta_left, theta_right)
    > 0.5. Candidates are removed highest-evidence first until the removal
    cap or min_history is reached.
    """
    L = len(history_embeddings)
    con = np.asarray(con, dtype=np.float64)
    removal_mask = np.zeros(L, dtype=bool)
    keep_floor = max(params.min_history,
                     math.ceil((1.0 - params.max_removal_frac) * L))
    max_removals = L - keep_floor
    if L <= params.min_history or max_removals <= 0:
        return list(range(L)), removal_mask

    candidates = []  # (evidence, index)
    for i in range(1, L - 1):
        e_left, e_right = con[i - 1], con[i]
        theta_left = rng.beta(params.alpha0 + e_left * KAPPA,
                              params.beta0 + (1.0 - e_left) * KAPPA)
        theta_right = rng.beta(params.alpha0 + e_right * KAPPA,
                               params.beta0 + (1.0 - e_right) * KAPPA)
        if min(theta_left, theta_right) > 0.5:
            candidates.append((min(e_left, e_right), i))

    candidates.sort(key=lambda c: (-c[0], c[1]))
    for _, i in candidates[:max_removals]:
        removal_mask[i] = True
    kept = [i for i in range(L) if not removal_mask[i]]
    return kept, removal_mask
