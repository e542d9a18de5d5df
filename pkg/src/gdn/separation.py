"""Gradient-based feature separation with class and surrounding constraints.

The refined features X' are split into *class* dims (top-k by gradient
importance) and *surrounding* dims (the rest). Class dims of anomalies are
pulled toward an anomaly prototype and away from the normal one; surrounding
dims are pulled together across edges and pushed apart for random
non-neighbors. Both penalties enter the loss as ``lam * exp(cla + sur)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .graph import CSR
from .models import PROB_FLOOR, true_class_prob

PROTO_EPS = 1e-8
EXP_CAP = 30.0


@dataclass(frozen=True)
class FeatureMask:
    k: int
    class_idx: np.ndarray
    surround_idx: np.ndarray
    scores: np.ndarray

    @property
    def d(self) -> int:
        return self.scores.shape[0]

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "class_idx": self.class_idx.tolist(),
            "surround_idx": self.surround_idx.tolist(),
            "scores": self.scores.tolist(),
        }

    @classmethod
    def from_json(cls, obj) -> "FeatureMask":
        return cls(
            int(obj["k"]),
            np.asarray(obj["class_idx"], dtype=np.int64),
            np.asarray(obj["surround_idx"], dtype=np.int64),
            np.asarray(obj["scores"], dtype=np.float64),
        )


@dataclass(frozen=True)
class Prototype:
    plus: np.ndarray
    minus: np.ndarray
    tau: float = 1.0
    epoch: int = 0

    def for_class(self, c: int) -> np.ndarray:
        return self.plus if c == 1 else self.minus


SCORE_MODES = ("per_class", "pooled")


def gradient_scores(tape: ad.Tape, refined: ad.Tensor, probs: ad.Tensor, labels, mask, mode="per_class") -> np.ndarray:
    """Per-dimension importance of X' for predicting the true class.

    With ``g[n] = d(sum_m log P[m, y_m]) / d X'[n]`` over the masked nodes,
    ``pooled`` is |sum_n g[n, j]| / N and ``per_class`` is
    sum_c |sum_{n: y_n = c} g[n, j]| / N. Pooling lets the two classes cancel
    (at a fitted bias the logit gradients sum to ~0), so per-class is the
    default. Adds a side branch to ``tape``; the main loss is unaffected.
    """
    if mode not in SCORE_MODES:
        raise ValueError(f"mode must be one of {SCORE_MODES}")
    idx = np.flatnonzero(mask) if np.asarray(mask).dtype == bool else np.asarray(mask, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("gradient_scores over an empty mask")
    logp = ad.sum(ad.log(ad.clip(true_class_prob(probs, labels, idx), lo=PROB_FLOOR)))
    g = tape.backward(logp)[refined][idx]
    if mode == "pooled":
        return np.abs(g.sum(axis=0)) / idx.size
    y = np.asarray(labels)[idx]
    return sum(np.abs(g[y == c].sum(axis=0)) for c in (0, 1)) / idx.size


def select_top_k(scores, k: int) -> FeatureMask:
    """Top-k dims by score; ties go to the lower index."""
    scores = np.asarray(scores, dtype=np.float64)
    d = scores.shape[0]
    if not 1 <= k <= d:
        raise ValueError(f"k={k} outside [1, {d}]")
    order = np.lexsort((np.arange(d), -scores))
    cls_idx = np.sort(order[:k])
    return FeatureMask(k, cls_idx, np.setdiff1d(np.arange(d), cls_idx), scores)


def class_feature_distributions(refined, mask: FeatureMask):
    """Row softmax over class dims and over surrounding dims.

    The surrounding part is ``None`` when every dim is a class dim.
    """
    c_dist = ad.softmax_rows(ad.mask_cols(refined, mask.class_idx))
    if mask.surround_idx.size == 0:
        return c_dist, None
    return c_dist, ad.softmax_rows(ad.mask_cols(refined, mask.surround_idx))


def _smooth(p):
    p = np.asarray(p, dtype=np.float64)
    if np.any(p <= 0):
        p = p + PROTO_EPS
        p = p / p.sum()
    return p.reshape(1, -1)


def class_constraint(c_dist, labels, nodes, proto: Prototype, both_classes: bool = False) -> ad.Tensor:
    """Mean over constrained nodes of KL(C_v || own proto) - KL(C_v || other proto).

    By default only anomalies among ``nodes`` are constrained. Prototypes are
    constants here.
    """
    labels = np.asarray(labels)
    nodes = np.asarray(nodes, dtype=np.int64)
    plus, minus = _smooth(proto.plus), _smooth(proto.minus)
    groups = [(nodes[labels[nodes] == 1], plus, minus)]
    if both_classes:
        groups.append((nodes[labels[nodes] == 0], minus, plus))
    count = sum(g[0].size for g in groups)
    if count == 0:
        return ad.const(0.0)
    total = None
    for idx, own, other in groups:
        if idx.size == 0:
            continue
        rows = ad.select_rows(c_dist, idx)
        diff = ad.sub(ad.kl_rows(rows, own), ad.kl_rows(rows, other))
        s = ad.sum(diff)
        total = s if total is None else ad.add(total, s)
    return ad.scale(total, 1.0 / count)


@dataclass(frozen=True)
class SurroundSample:
    """Pairs (u, v) feeding KL(S_u || S_v), with signed per-pair weights."""

    u: np.ndarray
    v: np.ndarray
    weight: np.ndarray
    n_centers: int = field(default=0)


def sample_surrounding_pairs(adj: CSR, nodes, m: int, rng) -> SurroundSample:
    """Up to ``m`` neighbors (uniform subset when more) and ``m`` distinct
    random non-neighbors per center node."""
    nodes = np.asarray(nodes, dtype=np.int64)
    n = adj.n_nodes
    us, vs, ws = [], [], []
    inv = 1.0 / max(nodes.size, 1)
    for v in nodes:
        nbrs = adj.neighbors(v)
        pos = nbrs if nbrs.size <= m else rng.choice(nbrs, size=m, replace=False)
        n_non = n - 1 - nbrs.size
        take = min(m, n_non)
        neg = np.empty(0, dtype=np.int64)
        if take > 0:
            if n_non <= 4 * m:
                pool = np.setdiff1d(np.arange(n), np.append(nbrs, v))
                neg = rng.choice(pool, size=take, replace=False)
            else:
                chosen: list[int] = []
                blocked = set(nbrs.tolist())
                blocked.add(int(v))
                while len(chosen) < take:
                    for c in rng.integers(0, n, size=2 * m).tolist():
                        if c not in blocked:
                            blocked.add(c)
                            chosen.append(c)
                            if len(chosen) == take:
                                break
                neg = np.asarray(chosen, dtype=np.int64)
        us.append(pos)
        us.append(neg)
        vs.append(np.full(pos.size + neg.size, v))
        ws.append(np.full(pos.size, inv))
        ws.append(np.full(neg.size, -inv))
    cat = lambda xs, dt: np.concatenate(xs).astype(dt) if xs else np.zeros(0, dt)  # noqa: E731
    return SurroundSample(cat(us, np.int64), cat(vs, np.int64), cat(ws, np.float64), int(nodes.size))


def surrounding_constraint(s_dist, sample: SurroundSample) -> ad.Tensor:
    """Mean over centers of sum_{u in N(v)} KL(S_u||S_v) - sum_{u not in N(v)} KL(S_u||S_v)."""
    if sample.u.size == 0:
        return ad.const(0.0)
    kl = ad.kl_rows(ad.select_rows(s_dist, sample.u), ad.select_rows(s_dist, sample.v))
    return ad.sum(ad.row_scale(kl, sample.weight))


def prototype_weights(members: np.ndarray, proto: np.ndarray, tau: float) -> np.ndarray:
    """Softmax over members of cosine(member, proto) / tau."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    members = np.asarray(members, dtype=np.float64)
    proto = np.asarray(proto, dtype=np.float64).ravel()
    s = members @ proto / (np.linalg.norm(members, axis=1) * np.linalg.norm(proto))
    z = s / tau
    e = np.exp(z - z.max())
    return e / e.sum()


def prototype_update(c_dist: np.ndarray, labels, nodes, proto: Prototype | None, tau: float = 1.0) -> Prototype:
    """Epoch-level prototype refresh (outside the tape).

    With no previous prototype each class starts from the mean of its
    members; otherwise members are reweighted by their similarity to the
    previous prototype.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    c_dist = np.asarray(c_dist, dtype=np.float64)
    labels = np.asarray(labels)
    nodes = np.asarray(nodes, dtype=np.int64)
    out = {}
    for c in (0, 1):
        members = c_dist[nodes[labels[nodes] == c]]
        if members.shape[0] == 0:
            raise ValueError(f"class {c} has no training members")
        if proto is None:
            p = members.mean(axis=0)
        else:
            p = prototype_weights(members, proto.for_class(c), tau) @ members
        out[c] = p / p.sum()
    epoch = 0 if proto is None else proto.epoch + 1
    return Prototype(plus=out[1], minus=out[0], tau=tau, epoch=epoch)


def total_loss(ce, cla, sur, lam: float):
    """ce + lam * exp(cla + sur); the exponent is capped at 30.

    Returns (loss, capped).
    """
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    c = cla if sur is None else ad.add(cla, sur)
    capped = c.item() > EXP_CAP
    c = ad.clip(c, hi=EXP_CAP)
    return ad.add(ce, ad.scale(ad.exp(c), lam)), capped


def separation_schedule(epoch: int, warmup: int, refresh_every: int = 1) -> str:
    """'recompute' at ``warmup`` and every ``refresh_every`` epochs after, else 'none'."""
    if warmup < 0 or refresh_every < 1:
        raise ValueError("warmup must be >= 0 and refresh_every >= 1")
    if epoch < warmup:
        return "none"
    return "recompute" if (epoch - warmup) % refresh_every == 0 else "none"
