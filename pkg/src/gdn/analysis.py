"""Feature-quality probes (logistic regression, kNN label propagation) and
separation-stability statistics."""

from __future__ import annotations

import itertools

import numpy as np

from . import metrics
from .errors import NumericError
from .graph import MultiRelationGraph
from .models import BackboneConfig, forward
from .separation import FeatureMask

VARIANTS = ("C", "C_prime", "CS", "CS_prime")
ZERO_MASS = 1e-12


def _idx(mask):
    mask = np.asarray(mask)
    return np.flatnonzero(mask) if mask.dtype == bool else mask.astype(np.int64)


def logistic_regression(features, labels, train_mask, test_mask, lr=0.1, epochs=300, seed=0, standardize=True):
    """Linear softmax classifier fit by full-batch gradient descent; returns test AUC."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    tr, te = _idx(train_mask), _idx(test_mask)
    if tr.size == 0 or te.size == 0:
        raise ValueError("train and test masks must be non-empty")
    if np.unique(y[tr]).size < 2:
        raise ValueError("training labels must contain both classes")
    if standardize:
        mu = x[tr].mean(axis=0)
        sd = x[tr].std(axis=0)
        x = (x - mu) / np.where(sd > 0, sd, 1.0)
    rng = np.random.default_rng(seed)
    a = np.sqrt(6.0 / (x.shape[1] + 2))
    w = rng.uniform(-a, a, size=(x.shape[1], 2))
    b = np.zeros(2)
    onehot = np.eye(2)[y[tr]]
    xt = x[tr]
    # divergence is detected through the loss, so silence the overflow noise
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(epochs):
            z = xt @ w + b
            z -= z.max(axis=1, keepdims=True)
            p = np.exp(z)
            p /= p.sum(axis=1, keepdims=True)
            loss = -np.mean(np.log(np.maximum((p * onehot).sum(axis=1), 1e-300)))
            if not np.isfinite(loss):
                raise NumericError(f"logistic regression diverged at epoch {epoch}")
            err = (p - onehot) / tr.size
            w -= lr * (xt.T @ err)
            b -= lr * err.sum(axis=0)
    z = x[te] @ w + b
    scores = z[:, 1] - z[:, 0]
    return metrics.auc(scores, y[te])


def knn_graph(features, k: int) -> np.ndarray:
    """Symmetric 0/1 adjacency joining each node to its k most cosine-similar
    other nodes (dense, for desk-scale n)."""
    x = np.asarray(features, dtype=np.float64)
    n = x.shape[0]
    if k < 1:
        raise ValueError("knn_k must be >= 1")
    k = min(k, n - 1)
    norm = np.linalg.norm(x, axis=1, keepdims=True)
    xn = x / np.where(norm > 0, norm, 1.0)
    sim = xn @ xn.T
    np.fill_diagonal(sim, -np.inf)
    # stable sort so equal similarities resolve by node id
    nbrs = np.argsort(-sim, axis=1, kind="stable")[:, :k]
    a = np.zeros((n, n))
    a[np.repeat(np.arange(n), k), nbrs.ravel()] = 1.0
    return np.maximum(a, a.T)


def propagate(adjacency, labels, train_mask, iters=50, alpha=0.85) -> np.ndarray:
    """F <- alpha D^-1 A F + (1 - alpha) Y0 with train rows clamped to Y0.

    Returns the (n, 2) class-mass matrix."""
    if iters < 1 or not 0 < alpha < 1:
        raise ValueError("need iters >= 1 and alpha in (0, 1)")
    a = np.asarray(adjacency, dtype=np.float64)
    deg = a.sum(axis=1, keepdims=True)
    walk = a / np.where(deg > 0, deg, 1.0)
    tr = _idx(train_mask)
    y0 = np.zeros((a.shape[0], 2))
    y0[tr, np.asarray(labels)[tr]] = 1.0
    f = y0.copy()
    for _ in range(iters):
        f = alpha * (walk @ f) + (1 - alpha) * y0
        f[tr] = y0[tr]
    return f


def class_one_share(f) -> np.ndarray:
    """Normalized class-1 mass; rows with no mass score 0.5."""
    total = f.sum(axis=1)
    out = np.full(f.shape[0], 0.5)
    ok = total > ZERO_MASS
    out[ok] = f[ok, 1] / total[ok]
    return out


def label_propagation(features, labels, train_mask, test_mask, knn_k=10, iters=50, alpha=0.85):
    """kNN-graph label propagation; returns test AUC."""
    f = propagate(knn_graph(features, knn_k), labels, train_mask, iters, alpha)
    te = _idx(test_mask)
    return metrics.auc(class_one_share(f)[te], np.asarray(labels)[te])


def feature_variants(g: MultiRelationGraph, params: dict, backbone: BackboneConfig, mask: FeatureMask) -> dict:
    """Raw/refined features restricted to the class dims, and in full."""
    refined = forward(g, params, backbone).refined.value
    return {
        "C": g.features[:, mask.class_idx],
        "C_prime": refined[:, mask.class_idx],
        "CS": g.features,
        "CS_prime": refined,
    }


def feature_quality(variants: dict, labels, train_mask, test_mask, seed=0, lr_kwargs=None, lp_kwargs=None) -> dict:
    """LR and LP test AUC per feature variant."""
    lr_kwargs = lr_kwargs or {}
    lp_kwargs = lp_kwargs or {}
    out = {"LR": {}, "LP": {}}
    for tag, x in variants.items():
        out["LR"][tag] = logistic_regression(x, labels, train_mask, test_mask, seed=seed, **lr_kwargs)
        out["LP"][tag] = label_propagation(x, labels, train_mask, test_mask, **lp_kwargs)
    return out


def stability_report(masks) -> dict:
    """Pairwise Jaccard of class-dim sets and per-dim selection counts."""
    masks = list(masks)
    if len(masks) < 2:
        raise ValueError("need at least two masks")
    d, k = masks[0].d, masks[0].k
    if any(m.d != d or m.k != k for m in masks):
        raise ValueError("masks must share d and k")
    sets = [set(m.class_idx.tolist()) for m in masks]
    jac = np.eye(len(sets))
    for i, j in itertools.combinations(range(len(sets)), 2):
        jac[i, j] = jac[j, i] = len(sets[i] & sets[j]) / len(sets[i] | sets[j])
    counts = np.zeros(d, dtype=np.int64)
    for s in sets:
        counts[list(s)] += 1
    off = jac[~np.eye(len(sets), dtype=bool)]
    return {
        "jaccard": jac.tolist(),
        "min_jaccard": float(off.min()),
        "mean_jaccard": float(off.mean()),
        "selection_counts": counts.tolist(),
    }
