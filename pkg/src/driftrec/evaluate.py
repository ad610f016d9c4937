"""Leave-one-out ranking evaluation: HR@K and NDCG@K against sampled
negatives, with pessimistic tie-breaking and multi-run aggregation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from driftrec.config import ModelConfig
from driftrec.data import TrainSample
from driftrec.diffusion import sample as diffusion_sample
from driftrec.rng import seeded_rng, torch_generator


class EvaluationError(ValueError):
    pass


@dataclass
class RankingResult:
    user_id: str
    rank: int        # 1-based among 1 + neg_samples candidates
    hit: int         # 1 iff rank <= K
    ndcg: float      # 1/log2(rank+1) if rank <= K else 0


def score_candidates(generated: torch.Tensor, candidates: torch.Tensor,
                     score_fn: str = "inner") -> torch.Tensor:
    """Scores of a generated embedding against candidate embeddings [C, d]."""
    if score_fn == "inner":
        return candidates @ generated
    if score_fn == "cosine":
        g = generated / generated.norm().clamp(min=1e-12)
        c = candidates / candidates.norm(dim=-1, keepdim=True).clamp(min=1e-12)
        return c @ g
    raise ValueError(f"unknown score_fn: {score_fn}")


def _rank_result(user_id: str, target_score: float, neg_scores: np.ndarray,
                 K: int) -> RankingResult:
    # pessimistic ties: the target is placed after equal-scored negatives
    rank = 1 + int((neg_scores >= target_score).sum())
    hit = int(rank <= K)
    ndcg = 1.0 / math.log2(rank + 1) if hit else 0.0
    return RankingResult(user_id=user_id, rank=rank, hit=hit, ndcg=ndcg)


def sample_negatives(n_items: int, exclude: set[int], neg_samples: int,
                     rng: np.random.Generator) -> np.ndarray:
    pool = np.setdiff1d(np.arange(n_items), np.fromiter(exclude, dtype=int))
    if len(pool) < neg_samples:
        raise EvaluationError(
            f"item universe too small: {len(pool)} candidates available, "
            f"{neg_samples} negatives requested")
    return rng.choice(pool, size=neg_samples, replace=False)


def evaluate_user(sample: TrainSample, model, full_items: list[int],
                  config: ModelConfig, seed: int) -> RankingResult:
    """Single-user evaluation. full_items is the user's whole sequence
    (history + target + any later items), all excluded from negatives."""
    results = evaluate_split([sample], {sample.user_id: full_items},
                             model, config, seed)
    return results[0]


@torch.no_grad()
def evaluate_split(samples: list[TrainSample], full_items: dict[str, list[int]],
                   model, config: ModelConfig, seed: int,
                   variant: str = "full") -> list[RankingResult]:
    """Batched evaluation of one split under one seed."""
    model.eval()
    n_items = model.items.n_items
    dts_rng = seeded_rng(seed, "eval-dts")
    gen = torch_generator(seed, "eval-sample")
    results = []
    bs = 512
    for start in range(0, len(samples), bs):
        chunk = samples[start:start + bs]
        processed = model.process_histories([s.history for s in chunk],
                                            dts_rng, variant=variant)
        generated = diffusion_sample(model.denoiser, processed.guidance,
                                     model.items.phi, model.schedule,
                                     config.guidance_strength, gen)
        for j, s in enumerate(chunk):
            neg_rng = seeded_rng(seed, f"eval-neg-{s.user_id}")
            negs = sample_negatives(n_items, set(full_items[s.user_id]),
                                    config.neg_samples, neg_rng)
            cand_idx = torch.tensor(np.concatenate(([s.target], negs)))
            cand_emb = model.items(cand_idx)
            scores = score_candidates(generated[j], cand_emb, config.score_fn)
            scores = scores.cpu().numpy()
            results.append(_rank_result(s.user_id, scores[0], scores[1:],
                                        config.K))
    return results


def aggregate(runs: list[list[RankingResult]]) -> dict:
    """Mean and sample std across runs of the per-run user means, as
    percentages with two decimals in the formatted fields."""
    if not runs:
        raise EvaluationError("need at least one run to aggregate")
    report = {}
    for metric in ("hr", "ndcg"):
        per_seed = []
        for run in runs:
            vals = [r.hit if metric == "hr" else r.ndcg for r in run]
            per_seed.append(100.0 * float(np.mean(vals)))
        mean = float(np.mean(per_seed))
        std = float(np.std(per_seed, ddof=1)) if len(per_seed) > 1 else 0.0
        report[metric] = {
            "mean": mean,
            "std": std,
            "per_seed": per_seed,
            "formatted": f"{mean:.2f}±{std:.2f}",
        }
    return report


def report_csv_rows(report: dict, seeds: list[int]) -> list[str]:
    rows = ["seed,hr,ndcg"]
    for i, seed in enumerate(seeds):
        rows.append(f"{seed},{report['hr']['per_seed'][i]:.4f},"
                    f"{report['ndcg']['per_seed'][i]:.4f}")
    return rows
