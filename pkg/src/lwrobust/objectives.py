"""Label-wise training objectives.

Every objective maps (model, flat parameters, batch) to a scalar on the tape.
Groups are labels: an instance belongs to every group whose label it carries,
so groups overlap. Groups with no member in the batch are left out of every
group average.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import diffcore as dc
from .diffcore import Var

EPS = 1e-7


@dataclass
class BatchView:
    """A mini-batch with per-label membership; repeated draws appear as separate rows."""

    indices: np.ndarray
    inputs: object
    targets: np.ndarray
    group_members: list[np.ndarray] = field(init=False, repr=False)

    def __post_init__(self):
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.targets.ndim != 2 or self.targets.shape[0] == 0:
            raise ValueError("batch is empty")
        member = self.targets > 0.5
        self.group_members = [np.flatnonzero(member[:, g]) for g in range(self.targets.shape[1])]

    @classmethod
    def from_corpus(cls, corpus, indices) -> "BatchView":
        indices = np.asarray(indices, dtype=np.int64)
        if indices.size == 0:
            raise ValueError("batch is empty")
        return cls(indices, corpus.inputs(indices), corpus.targets(indices))

    def __len__(self) -> int:
        return self.targets.shape[0]

    @property
    def num_labels(self) -> int:
        return self.targets.shape[1]

    @property
    def counts(self) -> np.ndarray:
        return np.array([len(m) for m in self.group_members])

    @property
    def present(self) -> np.ndarray:
        return np.flatnonzero(self.counts > 0)

    def group_average_matrix(self) -> np.ndarray:
        """(L, N) matrix whose row g averages over group g's members (zero row if absent)."""
        counts = self.counts
        A = (self.targets > 0.5).T.astype(np.float64)
        scale = np.divide(1.0, counts, out=np.zeros(len(counts)), where=counts > 0)
        return A * scale[:, None]


@dataclass(frozen=True)
class ObjectiveConfig:
    lam: float = 1.0
    lam1: float = 1.0
    lam2: float = 1.0
    dro_eta: float = 0.01

    def __post_init__(self):
        if min(self.lam, self.lam1, self.lam2) < 0:
            raise ValueError("penalty weights must be nonnegative")
        if self.dro_eta <= 0:
            raise ValueError("dro_eta must be positive")


@dataclass(frozen=True)
class DroState:
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("DRO weights must lie on the probability simplex")
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, L: int) -> "DroState":
        return cls(np.full(L, 1.0 / L))


def dro_diagnostics(state: DroState) -> dict[str, float]:
    w = state.weights
    nz = w[w > 0]
    return {
        "min_max_ratio": float(w.min() / w.max()),
        "entropy": float(-np.sum(nz * np.log(nz))),
    }


# -- building blocks ------------------------------------------------------------

def bce_instance(probs, target) -> float:
    """Mean binary cross-entropy over labels for one instance."""
    probs = np.clip(np.asarray(probs, dtype=np.float64), EPS, 1 - EPS)
    target = np.asarray(target, dtype=np.float64)
    if probs.shape != target.shape:
        raise ValueError(f"length mismatch: {probs.shape} vs {target.shape}")
    return float(np.mean(-target * np.log(probs) - (1 - target) * np.log(1 - probs)))


def _bce_rows(logits: Var, targets: np.ndarray) -> Var:
    p = dc.clip(dc.sigmoid(logits), EPS, 1 - EPS)
    cell = -(targets * dc.log(p)) - (1.0 - targets) * dc.log(1.0 - p)
    return dc.mean(cell, axis=1)


def _present_group_losses(bce: Var, batch: BatchView) -> Var:
    return dc.take(dc.matmul(batch.group_average_matrix(), bce), batch.present)


def _irm_penalties(logits: Var, batch: BatchView) -> Var:
    per_instance = dc.mean(dc.dummy_scale_grad(logits, batch.targets), axis=1)
    return dc.square(dc.take(dc.matmul(batch.group_average_matrix(), per_instance), batch.present))


def _sd_penalty(logits: Var) -> Var:
    return dc.mean(dc.square(logits))


def _forward(model, theta: Var, batch: BatchView) -> Var:
    if len(batch) == 0:
        raise ValueError("batch is empty")
    return model.logits(theta, batch.inputs)


# -- objectives ------------------------------------------------------------------

def erm(model, theta: Var, batch: BatchView, cfg: ObjectiveConfig | None = None) -> Var:
    return dc.mean(_bce_rows(_forward(model, theta, batch), batch.targets))


def group_losses(model, theta: Var, batch: BatchView) -> tuple[Var, np.ndarray]:
    """Per-label losses (length L, zero where absent) and the presence mask."""
    bce = _bce_rows(_forward(model, theta, batch), batch.targets)
    return dc.matmul(batch.group_average_matrix(), bce), batch.counts > 0


def group_uniform(model, theta: Var, batch: BatchView, cfg: ObjectiveConfig | None = None) -> Var:
    bce = _bce_rows(_forward(model, theta, batch), batch.targets)
    return dc.mean(_present_group_losses(bce, batch))


def group_dro(model, theta: Var, batch: BatchView, state: DroState, cfg: ObjectiveConfig) -> tuple[Var, DroState]:
    """Exponentiated-gradient group weighting; absent groups keep their previous weight."""
    L = batch.num_labels
    if state.weights.shape != (L,):
        raise ValueError(f"DRO state has {state.weights.shape[0]} weights for {L} labels")
    bce = _bce_rows(_forward(model, theta, batch), batch.targets)
    losses = dc.matmul(batch.group_average_matrix(), bce)
    present = batch.counts > 0
    u = state.weights * np.where(present, np.exp(cfg.dro_eta * losses.value), 1.0)
    w = u / u.sum()
    return dc.matmul(np.where(present, w, 0.0), losses), DroState(w)


def dro_weighted_loss(model, theta: Var, batch: BatchView, weights: np.ndarray) -> Var:
    """Group DRO loss for fixed weights; this is the function whose gradient a DRO step uses."""
    bce = _bce_rows(_forward(model, theta, batch), batch.targets)
    losses = dc.matmul(batch.group_average_matrix(), bce)
    return dc.matmul(np.where(batch.counts > 0, weights, 0.0), losses)


def vrex(model, theta: Var, batch: BatchView, cfg: ObjectiveConfig) -> Var:
    bce = _bce_rows(_forward(model, theta, batch), batch.targets)
    return dc.mean(bce) + cfg.lam * dc.variance(_present_group_losses(bce, batch))


def irm(model, theta: Var, batch: BatchView, cfg: ObjectiveConfig) -> Var:
    logits = _forward(model, theta, batch)
    bce = _bce_rows(logits, batch.targets)
    return dc.mean(_present_group_losses(bce, batch) + cfg.lam * _irm_penalties(logits, batch))


def coral_penalty(rep: Var, batch: BatchView) -> Var:
    """Mean over consecutive present-label pairs of covariance and mean distances."""
    present = batch.present
    tape = rep.tape
    if len(present) < 2:
        return tape.const(0.0)
    stats = []
    for g in present:
        rows = dc.take(rep, batch.group_members[g])
        stats.append((dc.cov_rows(rows), dc.mean(rows, axis=0)))
    total = None
    for (ca, ma), (cb, mb) in zip(stats[:-1], stats[1:]):
        term = dc.sum(dc.square(ca - cb)) + dc.sum(dc.square(ma - mb))
        total = term if total is None else total + term
    return total * (1.0 / (len(present) - 1))


def coral(model, theta: Var, batch: BatchView, cfg: ObjectiveConfig) -> Var:
    rep = model.representation(theta, batch.inputs)
    if not isinstance(rep, Var):
        rep = theta.tape.const(rep)
    loss = erm(model, theta, batch)
    return loss + cfg.lam * coral_penalty(rep, batch)


def spectral_decoupling(model, theta: Var, batch: BatchView, cfg: ObjectiveConfig) -> Var:
    logits = _forward(model, theta, batch)
    return dc.mean(_bce_rows(logits, batch.targets)) + cfg.lam * _sd_penalty(logits)


def lwdro_v1(model, theta: Var, batch: BatchView, cfg: ObjectiveConfig) -> Var:
    logits = _forward(model, theta, batch)
    bce = _bce_rows(logits, batch.targets)
    return dc.mean(_present_group_losses(bce, batch)) + cfg.lam * _sd_penalty(logits)


def lwdro_v2(model, theta: Var, batch: BatchView, cfg: ObjectiveConfig) -> Var:
    logits = _forward(model, theta, batch)
    bce = _bce_rows(logits, batch.targets)
    grouped = _present_group_losses(bce, batch) + cfg.lam1 * _irm_penalties(logits, batch)
    return dc.mean(grouped) + cfg.lam2 * _sd_penalty(logits)


# -- registry --------------------------------------------------------------------

def _stateless(fn) -> Callable:
    def run(model, theta, batch, cfg, state):
        return fn(model, theta, batch, cfg), state
    return run


def _run_dro(model, theta, batch, cfg, state):
    return group_dro(model, theta, batch, state, cfg)


OBJECTIVES: dict[str, Callable] = {
    "erm": _stateless(erm),
    "erm_gs": _stateless(erm),
    "group_uniform": _stateless(group_uniform),
    "group_dro": _run_dro,
    "vrex": _stateless(vrex),
    "irm": _stateless(irm),
    "coral": _stateless(coral),
    "sd": _stateless(spectral_decoupling),
    "lwdro_v1": _stateless(lwdro_v1),
    "lwdro_v2": _stateless(lwdro_v2),
}


def get_objective(name: str) -> Callable:
    try:
        return OBJECTIVES[name]
    except KeyError:
        raise ValueError(f"unknown objective {name!r}; choose from {sorted(OBJECTIVES)}") from None


def check_compatible(name: str, model) -> None:
    if name == "coral" and getattr(model, "kind", None) == "lwan":
        from .models import IncompatibleObjective
        raise IncompatibleObjective("CORAL is not applicable to LWAN: there is no shared document representation")
