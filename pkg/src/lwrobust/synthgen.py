"""Synthetic multi-label corpora with power-law imbalance and temporal label drift."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np

from .data import FEATURE, TOKEN, Corpus, Document, chronological_split, label_distribution, random_split

MAX_LABEL_TRIES = 100


@dataclass(frozen=True)
class GenConfig:
    L: int = 60
    N: int = 20000
    mode: str = FEATURE
    d: int = 32
    V: int = 500
    T: int = 16
    zipf_s: float = 1.2
    drift_rho: float = 0.5
    label_rate: float = 2.0
    noise_sigma: float = 0.3
    seed: int = 7
    topic_concentration: float = 0.1

    def __post_init__(self):
        if self.L < 1 or self.N < 1:
            raise ValueError("L and N must be positive")
        if self.mode not in (FEATURE, TOKEN):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == FEATURE and self.d < 1:
            raise ValueError("feature mode needs d >= 1")
        if self.mode == TOKEN and (self.V < 1 or self.T < 1):
            raise ValueError("token mode needs V >= 1 and T >= 1")
        if self.zipf_s < 0:
            raise ValueError("zipf_s must be >= 0")
        if not 0.0 <= self.drift_rho <= 1.0:
            raise ValueError("drift_rho must lie in [0, 1]")
        if self.label_rate <= 0:
            raise ValueError("label_rate must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.topic_concentration <= 0:
            raise ValueError("topic_concentration must be positive")
        if self.n_drifted % 2:
            raise ValueError(
                f"drift_rho * L = {self.drift_rho * self.L:g} rounds to the odd count {self.n_drifted}; "
                "drifted labels are swapped in pairs")

    @property
    def n_drifted(self) -> int:
        return int(round(self.drift_rho * self.L))

    @classmethod
    def field_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))


@dataclass(frozen=True)
class DriftSchedule:
    base_prev: np.ndarray
    end_prev: np.ndarray
    pairs: tuple[tuple[int, int], ...] = ()


def drift_prevalence(schedule: DriftSchedule, t: float) -> np.ndarray:
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    return (1.0 - t) * schedule.base_prev + t * schedule.end_prev


def base_prevalence(L: int, zipf_s: float, label_rate: float) -> np.ndarray:
    w = np.arange(1, L + 1, dtype=np.float64) ** -zipf_s
    return label_rate * w / w.sum()


def make_schedule(cfg: GenConfig, rng: np.random.Generator) -> DriftSchedule:
    base = base_prevalence(cfg.L, cfg.zipf_s, cfg.label_rate)
    end = base.copy()
    pairs = []
    n = cfg.n_drifted
    if n:
        chosen = rng.choice(cfg.L, size=n, replace=False)
        # descending prevalence, ties by label index
        chosen = sorted(int(c) for c in chosen)
        chosen.sort(key=lambda l: -base[l])
        for j in range(n // 2):
            a, b = chosen[j], chosen[n - 1 - j]
            end[a], end[b] = base[b], base[a]
            pairs.append((a, b))
    return DriftSchedule(base, end, tuple(pairs))


def generate_corpus(cfg: GenConfig) -> Corpus:
    """Draw a corpus whose label prevalences interpolate from the base to the drifted schedule."""
    rng = np.random.default_rng(cfg.seed)
    schedule = make_schedule(cfg, rng)
    N, L = cfg.N, cfg.L
    times = np.arange(N) / (N - 1) if N > 1 else np.zeros(1)
    prev = (1.0 - times)[:, None] * schedule.base_prev + times[:, None] * schedule.end_prev
    p = np.minimum(1.0, prev)

    draws = rng.random((N, L)) < p
    label_sets: list[tuple[int, ...]] = []
    for i in range(N):
        row = draws[i]
        tries = 1
        while not row.any() and tries < MAX_LABEL_TRIES:
            row = rng.random(L) < p[i]
            tries += 1
        if not row.any():
            row = np.zeros(L, dtype=bool)
            row[int(np.argmax(prev[i]))] = True
        label_sets.append(tuple(int(l) for l in np.flatnonzero(row)))

    width = len(str(N - 1))
    ids = [f"doc{i:0{width}d}" for i in range(N)]

    if cfg.mode == FEATURE:
        protos = rng.standard_normal((L, cfg.d))
        protos /= np.linalg.norm(protos, axis=1, keepdims=True)
        noise = rng.standard_normal((N, cfg.d))
        docs = []
        for i, labels in enumerate(label_sets):
            x = protos[list(labels)].mean(axis=0) + cfg.noise_sigma * noise[i]
            docs.append(Document(ids[i], float(times[i]), labels, features=x))
    else:
        topics = rng.dirichlet(np.full(cfg.V, cfg.topic_concentration), size=L)
        cdf = np.cumsum(topics, axis=1)
        cdf[:, -1] = 1.0
        docs = []
        for i, labels in enumerate(label_sets):
            which = rng.integers(0, len(labels), size=cfg.T)
            u = rng.random(cfg.T)
            toks = np.array([np.searchsorted(cdf[labels[w]], uu, side="right") for w, uu in zip(which, u)],
                            dtype=np.int64)
            docs.append(Document(ids[i], float(times[i]), labels, tokens=np.minimum(toks, cfg.V - 1)))
    return Corpus(docs, L, cfg.mode)


@dataclass(frozen=True)
class ShiftStats:
    chronological: float
    random: float
    multiplier: float
    degenerate: bool


def shift_statistics(corpus: Corpus, fractions: Sequence[float], random_seed: int = 0) -> ShiftStats:
    """Train-test label shift under chronological and random splits, and their ratio."""
    from .metrics import wasserstein_label_shift

    if len(corpus) < 10:
        raise ValueError("shift statistics need at least 10 documents")
    chrono = chronological_split(corpus, fractions)
    rand = random_split(corpus, fractions, random_seed)
    ws_c = wasserstein_label_shift(label_distribution(corpus, chrono.train), label_distribution(corpus, chrono.test))
    ws_r = wasserstein_label_shift(label_distribution(corpus, rand.train), label_distribution(corpus, rand.test))
    if ws_r == 0.0:
        return ShiftStats(ws_c, ws_r, math.inf, True)
    return ShiftStats(ws_c, ws_r, ws_c / ws_r, False)


def shift_multiplier(corpus: Corpus, fractions: Sequence[float]) -> float:
    stats = shift_statistics(corpus, fractions)
    if stats.degenerate:
        warnings.warn("random-split shift is zero; multiplier reported as +inf", RuntimeWarning, stacklevel=2)
    return stats.multiplier
