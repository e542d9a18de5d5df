"""Full-batch training loop: momentum gradient descent on cross-entropy plus
the separation constraints, early stopping on validation AUC."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import metrics
from .config import RunConfig
from .errors import DataError, NumericError
from .graph import MultiRelationGraph
from .models import BackboneConfig, cross_entropy, forward, init_params
from .separation import (
    FeatureMask,
    Prototype,
    class_constraint,
    class_feature_distributions,
    gradient_scores,
    prototype_update,
    sample_surrounding_pairs,
    select_top_k,
    separation_schedule,
    surrounding_constraint,
    total_loss,
)
from .splits import SplitAssignment, make_split

log = logging.getLogger(__name__)


@dataclass
class SeedResult:
    seed: int
    params: dict
    backbone: BackboneConfig
    split: SplitAssignment
    metrics: metrics.MetricsReport
    best_epoch: int
    best_val_auc: float
    loss_trace: list = field(default_factory=list)
    val_trace: list = field(default_factory=list)
    mask: FeatureMask | None = None
    prototype: Prototype | None = None
    capped_epochs: list = field(default_factory=list)
    wall_clock: float = 0.0


def backbone_config(cfg: RunConfig, g: MultiRelationGraph) -> BackboneConfig:
    return BackboneConfig(
        input_dim=g.n_features,
        n_relations=g.n_relations,
        kind=cfg.kind,
        hidden_dim=cfg.hidden_dim,
        n_layers=cfg.n_layers,
        dropout=cfg.dropout,
    )


def predict(g: MultiRelationGraph, params: dict, backbone: BackboneConfig) -> np.ndarray:
    """Anomaly probability per node."""
    return forward(g, params, backbone).probs.value[:, 1].copy()


def choose_threshold(mode: str, scores, labels, valid_mask) -> float:
    if mode == "fixed":
        return 0.5
    return metrics.best_f1_threshold(scores, labels, valid_mask)


def _split_for(cfg: RunConfig, g: MultiRelationGraph, seed: int, split: SplitAssignment | None):
    if split is not None:
        return split
    split_seed = seed if cfg.split_seed is None else cfg.split_seed
    return make_split(g, cfg.split_mode, cfg.ratios, split_seed)


def train_seed(g: MultiRelationGraph, cfg: RunConfig, seed: int, split: SplitAssignment | None = None) -> SeedResult:
    t0 = time.perf_counter()
    split = _split_for(cfg, g, seed, split)
    labels = g.labels
    train_idx = np.flatnonzero(split.train)
    for c in (0, 1):
        if not np.any(labels[train_idx] == c):
            raise DataError(f"class {c} is empty in the training split")
    valid_mask = split.valid
    backbone = backbone_config(cfg, g)
    k = cfg.resolved_k(g.n_features)
    merged = g.merged_adjacency()

    params = init_params(backbone, seed)
    velocity = {name: np.zeros_like(v) for name, v in params.items()}
    drop_rng = np.random.default_rng([seed, 1])
    pair_rng = np.random.default_rng([seed, 2])

    mask: FeatureMask | None = None
    proto: Prototype | None = None
    best = (-np.inf, -1, params)
    loss_trace, val_trace, capped_epochs = [], [], []

    for epoch in range(cfg.epochs):
        tape = ad.Tape()
        tracked = {name: tape.var(v, name=name) for name, v in params.items()}
        out = forward(g, tracked, backbone, drop_rng if cfg.dropout > 0 else None)
        loss = cross_entropy(out.probs, labels, train_idx)
        c_dist = None

        if cfg.gdn:
            if separation_schedule(epoch, cfg.warmup, cfg.refresh_every) == "recompute":
                new_mask = select_top_k(gradient_scores(tape, out.refined, out.probs, labels, train_idx, cfg.score_mode), k)
                if mask is None or not np.array_equal(mask.class_idx, new_mask.class_idx):
                    proto = None
                mask = new_mask
            if mask is not None:
                c_dist, s_dist = class_feature_distributions(out.refined, mask)
                if proto is None:
                    proto = prototype_update(c_dist.value, labels, train_idx, None, cfg.tau)
                cla = class_constraint(c_dist, labels, train_idx, proto, cfg.constrain_both_classes)
                sur = None
                if s_dist is not None:
                    pairs = sample_surrounding_pairs(merged, train_idx, cfg.negatives, pair_rng)
                    sur = surrounding_constraint(s_dist, pairs)
                loss, capped = total_loss(loss, cla, sur, cfg.lam)
                if capped:
                    capped_epochs.append(epoch)

        loss_value = loss.item()
        if not np.isfinite(loss_value):
            raise NumericError(f"seed {seed}: non-finite loss at epoch {epoch}")
        loss_trace.append(loss_value)

        if cfg.dropout > 0:
            scores = predict(g, params, backbone)
        else:
            scores = out.probs.value[:, 1]
        val_auc = metrics.auc(scores, labels, valid_mask)
        val_trace.append(val_auc)
        if val_auc > best[0]:
            best = (val_auc, epoch, params)

        grads = tape.backward(loss)
        new_params = {}
        for name, value in params.items():
            grad = grads[tracked[name]]
            if cfg.weight_decay:
                grad = grad + cfg.weight_decay * value
            velocity[name] = cfg.momentum * velocity[name] + grad
            new_params[name] = value - cfg.lr * velocity[name]
        params = new_params

        if c_dist is not None:
            proto = prototype_update(c_dist.value, labels, train_idx, proto, cfg.tau)
        if epoch - best[1] >= cfg.patience:
            log.info("seed %d: early stop at epoch %d (best %d)", seed, epoch, best[1])
            break

    best_val, best_epoch, best_params = best
    if best_epoch < 0:
        best_params = params
    scores = predict(g, best_params, backbone)
    threshold = choose_threshold(cfg.threshold_mode, scores, labels, valid_mask)
    report = metrics.evaluate(scores, labels, split.test, threshold)
    return SeedResult(
        seed=seed,
        params=best_params,
        backbone=backbone,
        split=split,
        metrics=report,
        best_epoch=best_epoch,
        best_val_auc=float(best_val),
        loss_trace=loss_trace,
        val_trace=val_trace,
        mask=mask,
        prototype=proto,
        capped_epochs=capped_epochs,
        wall_clock=time.perf_counter() - t0,
    )
