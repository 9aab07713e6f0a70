"""AdamW training loop with dev-based early stopping and multi-seed selection."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import diffcore as dc
from .data import Corpus, SplitSet, head_tail_partition, label_distribution
from .metrics import MetricsReport, Predictions, evaluate
from .models import probabilities
from .objectives import (DroState, ObjectiveConfig, check_compatible, dro_diagnostics,
                         get_objective)
from .sampler import SamplerConfig, iter_batch_views
from .seeding import derive_seed

log = logging.getLogger(__name__)

PAPER_LR = 2e-5  # suits pretrained encoders; toy models default to 1e-3
SELECTION_METRICS = ("micro_f1", "macro_f1", "mean_rp")


@dataclass(frozen=True)
class TrainConfig:
    objective: str = "erm"
    objective_cfg: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    lr: float = 1e-3
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    max_epochs: int = 20
    patience: int = 3
    seeds: tuple[int, ...] = (0, 1, 2)
    selection_metric: str = "macro_f1"
    threshold: float = 0.5

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.selection_metric not in SELECTION_METRICS:
            raise ValueError(f"selection_metric must be one of {SELECTION_METRICS}")
        get_objective(self.objective)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adamw_step(params: np.ndarray, gradient: np.ndarray, state: AdamState,
               cfg: TrainConfig) -> tuple[np.ndarray, AdamState]:
    """One decoupled-weight-decay Adam update; decay uses the pre-update parameters."""
    if params.shape != gradient.shape:
        raise ValueError(f"gradient shape {gradient.shape} does not match parameters {params.shape}")
    if not np.all(np.isfinite(gradient)):
        raise FloatingPointError(f"non-finite gradient at step {state.t + 1}")
    b1, b2 = cfg.betas
    t = state.t + 1
    m = b1 * state.m + (1 - b1) * gradient
    v = b2 * state.v + (1 - b2) * gradient * gradient
    m_hat = m / (1 - b1 ** t)
    v_hat = v / (1 - b2 ** t)
    new = params - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps) - cfg.lr * cfg.weight_decay * params
    return new, AdamState(m, v, t)


@dataclass
class RunHistory:
    epochs: list[dict] = field(default_factory=list)
    dro_trace: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_score: float = -np.inf
    stopped_epoch: int = 0
    wall_time: float = 0.0


def predict(model, params: dc.Params, corpus: Corpus, indices: Sequence[int], chunk: int = 2048) -> np.ndarray:
    indices = np.asarray(indices, dtype=np.int64)
    out = [probabilities(model, params, corpus.inputs(indices[i:i + chunk]))
           for i in range(0, indices.size, chunk)]
    return np.concatenate(out, axis=0)


def evaluate_split(model, params: dc.Params, corpus: Corpus, indices: Sequence[int],
                   threshold: float = 0.5, head=None, tail=None) -> tuple[MetricsReport, Predictions]:
    preds = Predictions(predict(model, params, corpus, indices), corpus.targets(indices), threshold)
    return evaluate(preds, head, tail), preds


def train(corpus: Corpus, splits: SplitSet, model, cfg: TrainConfig, seed: int,
          log_path: str | Path | None = None) -> tuple[dc.Params, RunHistory]:
    """Train from a seeded initialization and return the dev-best snapshot."""
    check_compatible(cfg.objective, model)
    objective = get_objective(cfg.objective)
    params = model.init_params(derive_seed(seed, "init"))
    sampler = replace(cfg.sampler, seed=derive_seed(seed, "sampler"))
    adam = AdamState.zeros(params.values.size)
    dro = DroState.uniform(corpus.num_labels)
    history = RunHistory()
    best = params.copy()
    since_best = 0
    start = time.perf_counter()
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(1, cfg.max_epochs + 1):
            losses = []
            for batch in iter_batch_views(corpus, splits.train, sampler, epoch):
                holder = {}

                def f(theta, batch=batch, holder=holder):
                    loss, holder["state"] = objective(model, theta, batch, cfg.objective_cfg, dro)
                    return loss

                value, g = dc.grad(f, params)
                if cfg.objective == "group_dro":
                    dro = holder["state"]
                    history.dro_trace.append(dro_diagnostics(dro))
                params.values, adam = adamw_step(params.values, g, adam, cfg)
                losses.append(value)
            dev_report, _ = evaluate_split(model, params, corpus, splits.dev, cfg.threshold)
            score = dev_report.metric(cfg.selection_metric)
            record = {"epoch": epoch, "train_loss": float(np.mean(losses)),
                      "dev": dev_report.summary(), "wall_time": time.perf_counter() - start}
            if cfg.objective == "group_dro":
                record["dro"] = dro_diagnostics(dro)
            history.epochs.append(record)
            if log_fh:
                log_fh.write(json.dumps(record, sort_keys=True) + "\n")
                log_fh.flush()
            if score > history.best_score:
                history.best_score, history.best_epoch = score, epoch
                best = params.copy()
                since_best = 0
            else:
                since_best += 1
            history.stopped_epoch = epoch
            log.debug("%s seed=%d epoch=%d loss=%.4f dev %s=%.4f", cfg.objective, seed, epoch,
                      record["train_loss"], cfg.selection_metric, score)
            if since_best >= cfg.patience:
                break
    finally:
        if log_fh:
            log_fh.close()
    history.wall_time = time.perf_counter() - start
    return best, history


@dataclass
class SeedRun:
    seed: int
    params: dc.Params
    history: RunHistory
    dev: MetricsReport
    test: MetricsReport
    test_predictions: Predictions


@dataclass
class MultiSeedResult:
    runs: list[SeedRun]
    best_index: int
    selection_metric: str
    dev_mean: float
    dev_std: float

    @property
    def best(self) -> SeedRun:
        return self.runs[self.best_index]


def select_best_seed(dev_scores: Sequence[float]) -> int:
    """Index of the highest dev score; the earliest seed wins ties."""
    return int(np.argmax(np.asarray(dev_scores, dtype=np.float64)))


def multi_seed_run(corpus: Corpus, splits: SplitSet, model, cfg: TrainConfig,
                   log_dir: str | Path | None = None) -> MultiSeedResult:
    head, tail = head_tail_partition(label_distribution(corpus, splits.train))
    runs = []
    for i, seed in enumerate(cfg.seeds):
        log_path = Path(log_dir) / f"{cfg.objective}_seed{i}.jsonl" if log_dir else None
        params, history = train(corpus, splits, model, cfg, seed, log_path)
        dev, _ = evaluate_split(model, params, corpus, splits.dev, cfg.threshold, head, tail)
        test, test_preds = evaluate_split(model, params, corpus, splits.test, cfg.threshold, head, tail)
        runs.append(SeedRun(seed, params, history, dev, test, test_preds))
    scores = [r.dev.metric(cfg.selection_metric) for r in runs]
    return MultiSeedResult(runs, select_best_seed(scores), cfg.selection_metric,
                           float(np.mean(scores)), float(np.std(scores)))
