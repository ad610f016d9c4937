"""Deterministic, labelled random streams.

Every source of randomness in the pipeline derives its own stream from
(seed, label), so runs are reproducible and streams are independent.
"""

from __future__ import annotations

import hashlib

import numpy as np
import torch


def _label_key(stream_label: str) -> tuple[int, ...]:
    digest = hashlib.sha256(stream_label.encode("utf-8")).digest()
    return tuple(int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4))


def seeded_rng(seed: int, stream_label: str) -> np.random.Generator:
    """Deterministic stream for (seed, label); distinct labels are independent."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=_label_key(stream_label))
    return np.random.default_rng(ss)


def torch_generator(seed: int, stream_label: str) -> torch.Generator:
    """Torch generator derived from the same (seed, label) scheme."""
    rng = seeded_rng(seed, stream_label)
    gen = torch.Generator()
    gen.manual_seed(int(rng.integers(0, 2**63 - 1)))
    return gen
