"""Multi-label evaluation: F1 variants, R-Precision, label shift and class-wise bias."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import LabelDistribution

DEFAULT_THRESHOLD = 0.5


@dataclass(frozen=True)
class Predictions:
    scores: np.ndarray
    gold: np.ndarray
    threshold: float = DEFAULT_THRESHOLD

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        gold = np.asarray(self.gold)
        if scores.ndim != 2 or scores.shape != gold.shape:
            raise ValueError(f"scores {scores.shape} and gold {gold.shape} must be matching N x L matrices")
        if scores.shape[0] < 1:
            raise ValueError("predictions need at least one document")
        if np.any(scores < 0) or np.any(scores > 1):
            raise ValueError("scores must lie in [0, 1]")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "gold", gold.astype(bool))

    @property
    def predicted(self) -> np.ndarray:
        return self.scores >= self.threshold

    def columns(self, labels: Sequence[int]) -> "Predictions":
        labels = list(labels)
        return Predictions(self.scores[:, labels], self.gold[:, labels], self.threshold)


@dataclass
class MetricsReport:
    micro_f1: float
    macro_f1: float
    mean_rp: float
    per_class_f1: np.ndarray
    labels: tuple[int, ...]
    rp_skipped: int = 0
    head: "MetricsReport | None" = None
    tail: "MetricsReport | None" = None
    shift: float | None = None

    def summary(self) -> dict[str, float]:
        out = {"micro_f1": self.micro_f1, "macro_f1": self.macro_f1, "mean_rp": self.mean_rp}
        for name in ("head", "tail"):
            sub = getattr(self, name)
            if sub is not None:
                out.update({f"{name}_{k}": v for k, v in sub.summary().items()})
        return out

    def metric(self, name: str) -> float:
        return self.summary()[name]


def _f1(tp, fp, fn):
    tp, fp, fn = (np.asarray(v, dtype=np.float64) for v in (tp, fp, fn))
    denom = 2 * tp + fp + fn
    return np.divide(2 * tp, denom, out=np.zeros_like(denom), where=denom > 0)


def confusion(p: Predictions) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per-class TP, FP, FN, TN counts."""
    pred, gold = p.predicted, p.gold
    tp = np.sum(pred & gold, axis=0)
    fp = np.sum(pred & ~gold, axis=0)
    fn = np.sum(~pred & gold, axis=0)
    tn = np.sum(~pred & ~gold, axis=0)
    return tp, fp, fn, tn


def f1_scores(p: Predictions) -> tuple[float, float, np.ndarray]:
    """Micro-F1, macro-F1 and per-class F1 (a class with no gold and no predicted positives scores 0)."""
    tp, fp, fn, _ = confusion(p)
    per_class = _f1(tp, fp, fn)
    micro = float(_f1(tp.sum(), fp.sum(), fn.sum()))
    return micro, _exact_mean(per_class), per_class


def _exact_mean(values: np.ndarray) -> float:
    # correctly rounded, so the result does not depend on summation order
    return math.fsum(values) / len(values) if len(values) else 0.0


def r_precision(p: Predictions) -> tuple[float, int]:
    """Mean R-Precision over documents with at least one gold label, and the skipped count."""
    gold_counts = p.gold.sum(axis=1)
    scored = gold_counts > 0
    n_skipped = int((~scored).sum())
    if not scored.any():
        raise ValueError("no document has a gold label; R-Precision undefined")
    # stable sort on negated scores breaks ties by ascending label index
    order = np.argsort(-p.scores[scored], axis=1, kind="stable")
    gold = p.gold[scored]
    R = gold_counts[scored]
    ranked_gold = np.take_along_axis(gold, order, axis=1)
    cols = np.arange(p.scores.shape[1])
    hits = np.sum(ranked_gold & (cols[None, :] < R[:, None]), axis=1)
    return _exact_mean(hits / R), n_skipped


def mean_r_precision(p: Predictions) -> float:
    return r_precision(p)[0]


def _report(p: Predictions, labels: Sequence[int]) -> MetricsReport:
    micro, macro, per_class = f1_scores(p)
    if p.gold.any(axis=1).any():
        mrp, skipped = r_precision(p)
    else:
        # nothing to rank against in this label subset
        mrp, skipped = 0.0, p.gold.shape[0]
    return MetricsReport(micro, macro, mrp, per_class, tuple(int(l) for l in labels), skipped)


def head_tail_report(p: Predictions, head: Sequence[int], tail: Sequence[int]) -> tuple[MetricsReport, MetricsReport]:
    head, tail = [int(l) for l in head], [int(l) for l in tail]
    if set(head) & set(tail):
        raise ValueError("head and tail label sets overlap")
    if set(head) | set(tail) != set(range(p.scores.shape[1])):
        raise ValueError("head and tail must cover all labels")
    return _report(p.columns(head), head), _report(p.columns(tail), tail)


def evaluate(p: Predictions, head: Sequence[int] | None = None, tail: Sequence[int] | None = None) -> MetricsReport:
    """Full report, with head/tail sub-reports when the partition is given."""
    report = _report(p, range(p.scores.shape[1]))
    if head is not None and tail is not None:
        report.head, report.tail = head_tail_report(p, head, tail)
    return report


def wasserstein_label_shift(p: LabelDistribution, q: LabelDistribution) -> float:
    """1-Wasserstein distance with unit spacing along ``p``'s frequency rank order."""
    if p.L != q.L:
        raise ValueError(f"label distributions differ in length: {p.L} vs {q.L}")
    order = p.rank_order()
    cdf_p = np.cumsum(p.probs[order])
    cdf_q = np.cumsum(q.probs[order])
    return float(np.sum(np.abs(cdf_p - cdf_q)))


@dataclass(frozen=True)
class CevResult:
    raw: float
    n_included: int
    n_excluded: int
    deltas: np.ndarray = field(repr=False)
    reconstructed: bool = True


def error_rates(p: Predictions) -> tuple[np.ndarray, np.ndarray]:
    """Per-class false-positive and false-negative rates (NaN where undefined)."""
    tp, fp, fn, tn = (c.astype(np.float64) for c in confusion(p))
    with np.errstate(invalid="ignore", divide="ignore"):
        fpr = np.where(fp + tn > 0, fp / (fp + tn), np.nan)
        fnr = np.where(fn + tp > 0, fn / (fn + tp), np.nan)
    return fpr, fnr


def cev_details(pA: Predictions, pB: Predictions) -> CevResult:
    """Combined error variance of model A relative to baseline B.

    Classes where B's FPR or FNR is zero or undefined cannot be normalized
    and are excluded; the count is reported.
    """
    if pA.gold.shape != pB.gold.shape or not np.array_equal(pA.gold, pB.gold):
        raise ValueError("CEV compares predictions on the same gold labels")
    fpr_a, fnr_a = error_rates(pA)
    fpr_b, fnr_b = error_rates(pB)
    ok = np.isfinite(fpr_b) & np.isfinite(fnr_b) & (fpr_b > 0) & (fnr_b > 0)
    if not ok.any():
        raise ValueError("no class has strictly positive baseline FPR and FNR")
    deltas = np.stack([(fpr_a[ok] - fpr_b[ok]) / fpr_b[ok], (fnr_a[ok] - fnr_b[ok]) / fnr_b[ok]], axis=1)
    center = np.array([_exact_mean(deltas[:, 0]), _exact_mean(deltas[:, 1])])
    centered = deltas - center
    raw = _exact_mean(centered[:, 0] * centered[:, 0] + centered[:, 1] * centered[:, 1])
    return CevResult(raw, int(ok.sum()), int((~ok).sum()), deltas)


def cev(pA: Predictions, pB: Predictions) -> float:
    return cev_details(pA, pB).raw


def normalize_cev(values: np.ndarray) -> np.ndarray:
    """Min-max rescale a set of raw CEV values to [0, 1], ignoring NaN entries."""
    values = np.asarray(values, dtype=np.float64)
    finite = np.isfinite(values)
    if not finite.any():
        return values.copy()
    lo, hi = values[finite].min(), values[finite].max()
    out = np.full_like(values, np.nan)
    out[finite] = 0.0 if hi == lo else (values[finite] - lo) / (hi - lo)
    return out
