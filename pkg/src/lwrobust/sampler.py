"""Mini-batch construction: plain shuffled batches and the balanced label-group sampler."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .objectives import BatchView

STANDARD = "standard"
GROUP_BALANCED = "group_balanced"


@dataclass(frozen=True)
class SamplerConfig:
    batch_size: int = 64
    n_per_group: int = 1
    seed: int = 0
    strategy: str = STANDARD

    def __post_init__(self):
        if self.batch_size < 1 or self.n_per_group < 1:
            raise ValueError("batch_size and n_per_group must be positive")
        if self.strategy not in (STANDARD, GROUP_BALANCED):
            raise ValueError(f"unknown sampler strategy {self.strategy!r}")
        if self.strategy == GROUP_BALANCED and self.batch_size % self.n_per_group:
            raise ValueError(
                f"batch_size {self.batch_size} must be a multiple of n_per_group {self.n_per_group}")


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed % 2**63, epoch]))


def standard_batches(train: Sequence[int], cfg: SamplerConfig, epoch: int) -> list[np.ndarray]:
    train = np.asarray(train, dtype=np.int64)
    if train.size == 0:
        raise ValueError("training set is empty")
    order = train[_epoch_rng(cfg.seed, epoch).permutation(train.size)]
    return [order[i:i + cfg.batch_size] for i in range(0, order.size, cfg.batch_size)]


def group_pools(train: Sequence[int], label_sets, num_labels: int) -> list[np.ndarray]:
    members: list[list[int]] = [[] for _ in range(num_labels)]
    for i in sorted(int(i) for i in train):
        for l in label_sets[i]:
            members[l].append(i)
    return [np.asarray(m, dtype=np.int64) for m in members]


def group_balanced_batches(train: Sequence[int], label_sets, cfg: SamplerConfig, epoch: int,
                           num_labels: int | None = None) -> list[np.ndarray]:
    """Cycle a seeded permutation of the labels, drawing ``n_per_group`` members of each with replacement.

    ``label_sets[i]`` is the label tuple of corpus document ``i``. Labels
    without a training member are dropped with a warning.
    """
    if cfg.batch_size % cfg.n_per_group:
        raise ValueError("batch_size must be a multiple of n_per_group")
    train = list(train)
    if not train:
        raise ValueError("training set is empty")
    if num_labels is None:
        num_labels = 1 + max(max(label_sets[i]) for i in train)
    pools = group_pools(train, label_sets, num_labels)
    active = np.array([g for g in range(num_labels) if pools[g].size], dtype=np.int64)
    dropped = num_labels - active.size
    if dropped:
        warnings.warn(f"{dropped} label(s) have no training instance and are skipped by the sampler",
                      RuntimeWarning, stacklevel=2)
    rng = _epoch_rng(cfg.seed, epoch)
    cycle = rng.permutation(active)
    groups_per_batch = cfg.batch_size // cfg.n_per_group
    n_batches = math.ceil(len(train) / cfg.batch_size)
    batches, pos = [], 0
    for _ in range(n_batches):
        parts = []
        for j in range(groups_per_batch):
            pool = pools[cycle[(pos + j) % cycle.size]]
            parts.append(pool[rng.integers(0, pool.size, size=cfg.n_per_group)])
        pos = (pos + groups_per_batch) % cycle.size
        batches.append(np.concatenate(parts))
    return batches


def epoch_batches(corpus, train: Sequence[int], cfg: SamplerConfig, epoch: int) -> list[np.ndarray]:
    if cfg.strategy == STANDARD:
        return standard_batches(train, cfg, epoch)
    label_sets = [d.labels for d in corpus.documents]
    return group_balanced_batches(train, label_sets, cfg, epoch, corpus.num_labels)


def iter_batch_views(corpus, train: Sequence[int], cfg: SamplerConfig, epoch: int) -> Iterator[BatchView]:
    for idx in epoch_batches(corpus, train, cfg, epoch):
        yield BatchView.from_corpus(corpus, idx)
