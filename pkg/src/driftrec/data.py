"""Interaction log ingestion, leave-one-out splitting, synthetic corpora.

File formats:
  raw log      : TSV ``user_id<TAB>item_id<TAB>timestamp`` (no header)
  vocabulary   : TSV ``item_id<TAB>index``
  corpus       : one line per user, ``user_id<TAB>idx1,idx2,...``
  labels       : one line per user, ``user_id<TAB>l1,l2,...`` with labels
                 in {regular, bridge, noise} (synthetic corpora only)
"""

from __future__ import annotations

import json
import os
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


class DataError(ValueError):
    pass


@dataclass
class InteractionSequence:
    """Ordered item indices for one user; last item is the prediction target."""
    user_id: str
    items: list[int]

    def __post_init__(self):
        if len(self.items) < 3:
            raise DataError(f"user {self.user_id}: sequence length must be >= 3")

    @property
    def history(self) -> list[int]:
        return self.items[:-1]

    @property
    def target(self) -> int:
        return self.items[-1]


@dataclass
class TrainSample:
    user_id: str
    history: list[int]
    target: int


@dataclass
class SyntheticSpec:
    n_users: int = 500
    n_items: int = 200
    n_clusters: int = 8
    shift_prob: float = 0.5
    noise_rate: float = 0.1
    min_len: int = 8
    max_len: int = 12
    latent_dim: int = 16
    # redundancy in stable phases: chance that a position repeats its
    # predecessor. Shifted (exploring) sequences never repeat, which is what
    # makes their continuity distribution flatter and their entropy higher.
    repeat_prob: float = 0.5

    def __post_init__(self):
        if not (0.0 <= self.shift_prob <= 1.0):
            raise DataError("shift_prob must be in [0,1]")
        if not (0.0 <= self.noise_rate <= 1.0):
            raise DataError("noise_rate must be in [0,1]")
        # bridge needs past and future context: position in [2, N-2]
        if self.min_len < 5:
            raise DataError("min_len must be >= 5 so a bridge has context")
        if self.max_len < self.min_len:
            raise DataError("max_len must be >= min_len")
        if self.n_items < self.n_clusters:
            raise DataError("need at least one item per cluster")


@dataclass
class SyntheticCorpus:
    sequences: list[InteractionSequence]
    labels: dict[str, list[str]]
    item_vectors: np.ndarray  # [n_items, latent_dim] generator latents
    spec: SyntheticSpec = field(repr=False, default=None)


# ---------------------------------------------------------------------------
# ingestion

def _read_raw(path: str) -> list[tuple[str, str, int]]:
    rows = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 tab-separated fields")
            user, item, ts = parts
            try:
                ts_int = int(ts)
            except ValueError:
                raise DataError(f"{path}:{lineno}: timestamp is not an integer")
            rows.append((user, item, ts_int))
    return rows


def ingest(path: str) -> tuple[list[InteractionSequence], dict[str, int]]:
    """Read a raw TSV log, apply iterative >=5-interaction filtering, and
    return chronologically ordered sequences with densely re-indexed items.

    Filtering runs to a fixed point: dropping an item can push a user below
    the threshold and vice versa. Sequences shorter than 3 are dropped.
    Returns (sequences, vocabulary item_id -> dense index).
    """
    rows = _read_raw(path)
    # stable chronological order per user; ties keep file order
    per_user: dict[str, list[str]] = {}
    indexed = [(user, item, ts, i) for i, (user, item, ts) in enumerate(rows)]
    indexed.sort(key=lambda r: (r[0], r[2], r[3]))
    for user, item, ts, _ in indexed:
        per_user.setdefault(user, []).append(item)

    changed = True
    while changed:
        changed = False
        item_counts = Counter(it for items in per_user.values() for it in items)
        for user in list(per_user):
            kept = [it for it in per_user[user] if item_counts[it] >= 5]
            if len(kept) != len(per_user[user]):
                per_user[user] = kept
                changed = True
        for user in list(per_user):
            if len(per_user[user]) < 5:
                del per_user[user]
                changed = True

    per_user = {u: items for u, items in per_user.items() if len(items) >= 3}
    if not per_user:
        raise DataError(f"{path}: no sequences remain after filtering")

    vocab_items = sorted({it for items in per_user.values() for it in items})
    vocab = {it: i for i, it in enumerate(vocab_items)}
    seqs = [InteractionSequence(user, [vocab[it] for it in per_user[user]])
            for user in sorted(per_user)]
    return seqs, vocab


# ---------------------------------------------------------------------------
# leave-one-out split

@dataclass
class Split:
    train: list[TrainSample]
    valid: list[TrainSample]
    test: list[TrainSample]
    skipped_short_histories: int = 0


def split_leave_one_out(seqs: list[InteractionSequence]) -> Split:
    """Per user: test target = last item, valid target = second-to-last,
    train = every earlier prefix. Histories are strict prefixes; candidates
    with history length < 2 are skipped (one continuity pair is required
    downstream) and counted.
    """
    train, valid, test = [], [], []
    skipped = 0
    for seq in seqs:
        items = seq.items
        n = len(items)
        candidates = {
            "test": TrainSample(seq.user_id, items[:n - 1], items[n - 1]),
            "valid": TrainSample(seq.user_id, items[:n - 2], items[n - 2]),
        }
        for name, sample in candidates.items():
            if len(sample.history) >= 2:
                (test if name == "test" else valid).append(sample)
            else:
                skipped += 1
        for t in range(2, n - 2):  # targets strictly before the valid target
            sample = TrainSample(seq.user_id, items[:t], items[t])
            if len(sample.history) >= 2:
                train.append(sample)
            else:
                skipped += 1
    return Split(train=train, valid=valid, test=test, skipped_short_histories=skipped)


# ---------------------------------------------------------------------------
# synthetic corpora with planted turning points

def generate_synthetic(spec: SyntheticSpec, rng: np.random.Generator) -> SyntheticCorpus:
    """Cluster-structured sequences with optional planted interest shifts.

    With probability shift_prob a sequence switches cluster at a bridge
    position in [2, N-2]; the bridge item is the first item of the new
    cluster. noise_rate of the remaining positions are replaced by uniform
    random items. Labels mark each position {regular, bridge, noise}.
    """
    centers = rng.normal(size=(spec.n_clusters, spec.latent_dim))
    centers = 3.0 * centers / np.linalg.norm(centers, axis=1, keepdims=True)
    cluster_of = np.arange(spec.n_items) % spec.n_clusters
    # moderate within-cluster spread: repeat pairs (cosine 1) stand out
    # against within-cluster pairs while clusters remain separable
    item_vectors = centers[cluster_of] + 1.0 * rng.normal(
        size=(spec.n_items, spec.latent_dim))
    cluster_items = [np.flatnonzero(cluster_of == c) for c in range(spec.n_clusters)]

    sequences: list[InteractionSequence] = []
    labels: dict[str, list[str]] = {}
    for u in range(spec.n_users):
        user_id = f"u{u}"
        n = int(rng.integers(spec.min_len, spec.max_len + 1))
        c0 = int(rng.integers(spec.n_clusters))
        shifted = bool(rng.random() < spec.shift_prob)
        lab = ["regular"] * n
        if shifted:
            bridge = int(rng.integers(2, n - 1))  # 1-based position in [2, n-2]
            c1 = int((c0 + 1 + rng.integers(spec.n_clusters - 1)) % spec.n_clusters)
            clusters = [c0 if pos < bridge else c1 for pos in range(1, n + 1)]
            lab[bridge - 1] = "bridge"
        else:
            clusters = [c0] * n
        items = [int(rng.choice(cluster_items[c])) for c in clusters]
        if not shifted:
            for pos in range(1, n):
                if rng.random() < spec.repeat_prob:
                    items[pos] = items[pos - 1]
        for pos in range(n):
            if lab[pos] == "bridge":
                continue
            if rng.random() < spec.noise_rate:
                items[pos] = int(rng.integers(spec.n_items))
                lab[pos] = "noise"
        sequences.append(InteractionSequence(user_id, items))
        labels[user_id] = lab
    return SyntheticCorpus(sequences=sequences, labels=labels,
                           item_vectors=item_vectors, spec=spec)


# ---------------------------------------------------------------------------
# corpus directory I/O

def write_corpus(out_dir: str, seqs: list[InteractionSequence], n_items: int,
                 vocab: Optional[dict[str, int]] = None,
                 labels: Optional[dict[str, list[str]]] = None,
                 item_vectors: Optional[np.ndarray] = None):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "corpus.txt"), "w") as f:
        for seq in seqs:
            f.write(f"{seq.user_id}\t{','.join(map(str, seq.items))}\n")
    if vocab is None:
        vocab = {f"i{i}": i for i in range(n_items)}
    with open(os.path.join(out_dir, "vocab.tsv"), "w") as f:
        for item, idx in sorted(vocab.items(), key=lambda kv: kv[1]):
            f.write(f"{item}\t{idx}\n")
    if labels is not None:
        with open(os.path.join(out_dir, "labels.txt"), "w") as f:
            for seq in seqs:
                f.write(f"{seq.user_id}\t{','.join(labels[seq.user_id])}\n")
    if item_vectors is not None:
        np.save(os.path.join(out_dir, "item_vectors.npy"), item_vectors)
    meta = {"n_items": n_items, "n_users": len(seqs)}
    with open(os.path.join(out_dir, "meta.json"), "w") as f:
        json.dump(meta, f, indent=2)


def read_corpus(data_dir: str) -> tuple[list[InteractionSequence], int,
                                        Optional[dict[str, list[str]]]]:
    with open(os.path.join(data_dir, "meta.json")) as f:
        meta = json.load(f)
    seqs = []
    with open(os.path.join(data_dir, "corpus.txt")) as f:
        for line in f:
            user, items = line.rstrip("\n").split("\t")
            seqs.append(InteractionSequence(user, [int(x) for x in items.split(",")]))
    labels = None
    labels_path = os.path.join(data_dir, "labels.txt")
    if os.path.exists(labels_path):
        labels = {}
        with open(labels_path) as f:
            for line in f:
                user, lab = line.rstrip("\n").split("\t")
                labels[user] = lab.split(",")
    return seqs, int(meta["n_items"]), labels


def vocab_hash(data_dir: str) -> str:
    import hashlib
    with open(os.path.join(data_dir, "vocab.tsv"), "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()
