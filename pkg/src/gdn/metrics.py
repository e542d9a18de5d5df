"""AUC, F1-macro, GMean and multi-seed aggregation."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

METRIC_NAMES = ("auc", "f1_macro", "gmean")


@dataclass(frozen=True)
class MetricsReport:
    auc: float
    f1_macro: float
    gmean: float
    tp: int
    fp: int
    tn: int
    fn: int
    threshold: float
    n_eval: int

    def to_json(self) -> dict:
        return asdict(self)


def _select(scores, labels, mask):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if mask is not None:
        mask = np.asarray(mask)
        idx = np.flatnonzero(mask) if mask.dtype == bool else mask
        scores, labels = scores[idx], labels[idx]
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("metric needs at least one positive and one negative")
    keep = labels >= 0
    return scores[keep], labels[keep]


def auc(scores, labels, mask=None) -> float:
    """Mann-Whitney AUC with average ranks for ties."""
    s, y = _select(scores, labels, mask)
    ranks = rankdata(s)
    pos = y == 1
    n_pos = pos.sum()
    n_neg = y.size - n_pos
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def confusion(scores, labels, mask=None, threshold=0.5):
    """(tp, fp, tn, fn) predicting anomaly iff score >= threshold."""
    s, y = _select(scores, labels, mask)
    pred = s >= threshold
    tp = int((pred & (y == 1)).sum())
    fp = int((pred & (y == 0)).sum())
    tn = int((~pred & (y == 0)).sum())
    fn = int((~pred & (y == 1)).sum())
    return tp, fp, tn, fn


def _f1(tp, fp, fn):
    denom = 2 * tp + fp + fn
    return 0.0 if denom == 0 else 2 * tp / denom


def f1_macro(scores, labels, mask=None, threshold=0.5) -> float:
    tp, fp, tn, fn = confusion(scores, labels, mask, threshold)
    # the negative class swaps the roles of tp/tn and fp/fn
    return 0.5 * (_f1(tp, fp, fn) + _f1(tn, fn, fp))


def gmean(scores, labels, mask=None, threshold=0.5) -> float:
    tp, fp, tn, fn = confusion(scores, labels, mask, threshold)
    return float(np.sqrt(tp / (tp + fn) * tn / (tn + fp)))


def evaluate(scores, labels, mask=None, threshold=0.5) -> MetricsReport:
    tp, fp, tn, fn = confusion(scores, labels, mask, threshold)
    return MetricsReport(
        auc=auc(scores, labels, mask),
        f1_macro=0.5 * (_f1(tp, fp, fn) + _f1(tn, fn, fp)),
        gmean=float(np.sqrt(tp / (tp + fn) * tn / (tn + fp))),
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
        threshold=float(threshold),
        n_eval=tp + fp + tn + fn,
    )


def best_f1_threshold(scores, labels, mask=None) -> float:
    """Threshold maximizing F1-macro; candidates are the observed scores."""
    s, y = _select(scores, labels, mask)
    best_t, best = 0.5, -1.0
    for t in np.unique(s):
        f = f1_macro(s, y, None, t)
        if f > best:
            best_t, best = float(t), f
    return best_t


def aggregate_runs(reports) -> dict:
    """Mean and sample standard deviation (ddof=1) per metric."""
    reports = list(reports)
    if len(reports) < 2:
        raise ValueError("aggregate_runs needs at least 2 reports")
    out = {}
    for name in METRIC_NAMES:
        vals = np.array([r[name] if isinstance(r, dict) else getattr(r, name) for r in reports])
        out[name] = {"mean": float(vals.mean()), "std": float(vals.std(ddof=1))}
    return out
