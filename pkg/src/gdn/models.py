"""Backbones: feature refinement layer, multi-relation RGCN (or merged-graph
GCN), and a two-class softmax head."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .graph import MultiRelationGraph

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class BackboneConfig:
    input_dim: int
    n_relations: int
    kind: str = "rgcn"
    hidden_dim: int = 64
    n_layers: int = 2
    dropout: float = 0.0

    def __post_init__(self):
        if self.kind not in ("rgcn", "gcn"):
            raise ValueError(f"unknown backbone kind {self.kind!r}")
        if self.hidden_dim < 1 or self.n_layers < 1 or self.input_dim < 1:
            raise ValueError("input_dim, hidden_dim and n_layers must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def relations_used(self) -> int:
        return 1 if self.kind == "gcn" else self.n_relations


def param_shapes(config: BackboneConfig) -> dict[str, tuple[int, int]]:
    d, h = config.input_dim, config.hidden_dim
    shapes = {"refine_W": (d, d), "refine_b": (1, d)}
    fan_in = d
    for layer in range(config.n_layers):
        shapes[f"layer{layer}_self"] = (fan_in, h)
        for r in range(config.relations_used):
            shapes[f"layer{layer}_rel{r}"] = (fan_in, h)
        fan_in = h
    shapes["cls_W"] = (h, 2)
    shapes["cls_b"] = (1, 2)
    return shapes


def init_params(config: BackboneConfig, seed: int) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases; the refinement starts at identity."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, (fi, fo) in param_shapes(config).items():
        if name.endswith("_b"):
            params[name] = np.zeros((fi, fo))
        elif name == "refine_W":
            params[name] = np.eye(fi)
        else:
            a = np.sqrt(6.0 / (fi + fo))
            params[name] = rng.uniform(-a, a, size=(fi, fo))
    return params


class ForwardResult(NamedTuple):
    refined: ad.Tensor
    hidden: list
    logits: ad.Tensor
    probs: ad.Tensor


def _adjacency(g: MultiRelationGraph, config: BackboneConfig):
    if config.kind == "gcn":
        return (g.merged_adjacency(),)
    if g.n_relations != config.n_relations:
        raise ValueError(f"model built for R={config.n_relations}, graph has R={g.n_relations}")
    return g.adjacency


def forward(g: MultiRelationGraph, params: dict, config: BackboneConfig, rng=None) -> ForwardResult:
    """Full-batch forward pass.

    ``params`` maps names to tensors (tracked or constant). Dropout is only
    applied when ``rng`` is given and ``config.dropout > 0``.
    """
    if g.n_features != config.input_dim:
        raise ValueError(f"features have {g.n_features} dims, model expects {config.input_dim}")
    p = {k: v if isinstance(v, ad.Tensor) else ad.const(v) for k, v in params.items()}
    adjacency = _adjacency(g, config)
    x = ad.const(g.features)
    refined = ad.relu(ad.add(ad.matmul(x, p["refine_W"]), p["refine_b"]))
    h = refined
    hidden = []
    inv_r = 1.0 / len(adjacency)
    for layer in range(config.n_layers):
        if rng is not None and config.dropout > 0:
            keep = (rng.random(h.shape) >= config.dropout) / (1.0 - config.dropout)
            h = ad.mul(h, keep)
        out = ad.matmul(h, p[f"layer{layer}_self"])
        msg = None
        for r, adj in enumerate(adjacency):
            term = ad.matmul(ad.neighbor_mean_aggregate(adj, h), p[f"layer{layer}_rel{r}"])
            msg = term if msg is None else ad.add(msg, term)
        h = ad.relu(ad.add(out, ad.scale(msg, inv_r)))
        hidden.append(h)
    logits = ad.add(ad.matmul(h, p["cls_W"]), p["cls_b"])
    return ForwardResult(refined, hidden, logits, ad.softmax_rows(logits))


def true_class_prob(probs: ad.Tensor, labels, idx) -> ad.Tensor:
    """(m, 1) column of P[v, y_v] for v in ``idx``."""
    idx = np.asarray(idx, dtype=np.int64)
    onehot = np.zeros((idx.shape[0], 2))
    onehot[np.arange(idx.shape[0]), np.asarray(labels)[idx]] = 1.0
    picked = ad.mul(ad.select_rows(probs, idx), onehot)
    return ad.matmul(picked, np.ones((2, 1)))


def cross_entropy(probs: ad.Tensor, labels, mask) -> ad.Tensor:
    """Mean of -log P[v, y_v] over masked nodes, with P floored at 1e-12."""
    idx = _mask_index(mask)
    if idx.size == 0:
        raise ValueError("cross_entropy over an empty mask")
    y = np.asarray(labels)[idx]
    if np.any((y != 0) & (y != 1)):
        raise ValueError("cross_entropy needs labels in {0, 1} on the mask")
    logp = ad.log(ad.clip(true_class_prob(probs, labels, idx), lo=PROB_FLOOR))
    return ad.scale(ad.sum(logp), -1.0 / idx.size)


def _mask_index(mask) -> np.ndarray:
    mask = np.asarray(mask)
    return np.flatnonzero(mask) if mask.dtype == bool else mask.astype(np.int64)


# ---------------------------------------------------------------------------
# checkpoints: little-endian float64 blob + JSON manifest
# ---------------------------------------------------------------------------


def save_checkpoint(path, params: dict, config: BackboneConfig, extra=None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    order = list(params)
    blob = np.concatenate([np.ascontiguousarray(params[k], dtype="<f8").ravel() for k in order])
    (path / "params.bin").write_bytes(blob.tobytes())
    manifest = {
        "order": order,
        "shapes": {k: list(params[k].shape) for k in order},
        "config": asdict(config),
    }
    if extra:
        manifest.update(extra)
    (path / "params.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def load_checkpoint(path):
    """Returns (params, config, manifest)."""
    path = Path(path)
    manifest = json.loads((path / "params.json").read_text())
    blob = np.frombuffer((path / "params.bin").read_bytes(), dtype="<f8")
    params, off = {}, 0
    for k in manifest["order"]:
        shape = tuple(manifest["shapes"][k])
        size = int(np.prod(shape))
        params[k] = blob[off : off + size].astype(np.float64).reshape(shape)
        off += size
    if off != blob.size:
        raise ValueError(f"{path}: checkpoint size mismatch")
    return params, BackboneConfig(**manifest["config"]), manifest
