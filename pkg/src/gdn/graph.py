"""Multi-relation attributed graph storage, CSV I/O and homophily statistics."""

from __future__ import annotations

import json
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import (
    EdgeIndexError,
    LabelValueError,
    MetaMismatchError,
    MissingFileError,
    RaggedFeaturesError,
)

MERGED = "merged"


@dataclass(frozen=True)
class CSR:
    """Symmetric, deduplicated neighbor lists without self-loops."""

    indptr: np.ndarray
    indices: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.indptr.shape[0] - 1

    @property
    def n_edges(self) -> int:
        """Number of undirected edges."""
        return self.indices.shape[0] // 2

    def degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v] : self.indptr[v + 1]]

    def edge_pairs(self) -> np.ndarray:
        """(E, 2) array of undirected edges with src < dst."""
        src = np.repeat(np.arange(self.n_nodes), self.degree())
        keep = src < self.indices
        return np.stack([src[keep], self.indices[keep]], axis=1)

    @classmethod
    def from_edges(cls, edges, n_nodes: int) -> "CSR":
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        u, v = edges[:, 0], edges[:, 1]
        if edges.size and (edges.min() < 0 or edges.max() >= n_nodes):
            raise EdgeIndexError(f"edge endpoint outside [0, {n_nodes})")
        src = np.concatenate([u, v])
        dst = np.concatenate([v, u])
        keep = src != dst
        key = np.unique(src[keep] * n_nodes + dst[keep])
        src, dst = key // n_nodes, key % n_nodes
        indptr = np.zeros(n_nodes + 1, dtype=np.int64)
        np.cumsum(np.bincount(src, minlength=n_nodes), out=indptr[1:])
        return cls(indptr, dst.astype(np.int64))


@dataclass(frozen=True)
class MultiRelationGraph:
    adjacency: tuple[CSR, ...]
    features: np.ndarray
    labels: np.ndarray
    _merged: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        n = self.features.shape[0]
        if self.features.ndim != 2:
            raise RaggedFeaturesError("features must be a 2-D matrix")
        if self.labels.shape != (n,):
            raise LabelValueError(f"{self.labels.shape[0]} labels for {n} feature rows")
        bad = ~np.isin(self.labels, (-1, 0, 1))
        if bad.any():
            raise LabelValueError(f"label {self.labels[bad][0]} at node {np.flatnonzero(bad)[0]} not in {{-1,0,1}}")
        for r, a in enumerate(self.adjacency):
            if a.n_nodes != n:
                raise EdgeIndexError(f"relation {r} built for {a.n_nodes} nodes, graph has {n}")

    @classmethod
    def from_edge_lists(cls, edge_lists, features, labels) -> "MultiRelationGraph":
        features = np.ascontiguousarray(features, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        n = features.shape[0]
        adj = tuple(CSR.from_edges(e, n) for e in edge_lists)
        return cls(adj, features, labels)

    @property
    def n_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def n_relations(self) -> int:
        return len(self.adjacency)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def merged_adjacency(self) -> CSR:
        if not self._merged:
            self._merged.append(merge_relations(self).adjacency[0])
        return self._merged[0]

    def relation(self, relation) -> CSR:
        if relation == MERGED:
            return self.merged_adjacency()
        if not 0 <= relation < self.n_relations:
            raise IndexError(f"relation {relation} out of range for R={self.n_relations}")
        return self.adjacency[relation]

    def permute(self, perm) -> "MultiRelationGraph":
        """Relabel nodes so that new node ``i`` is old node ``perm[i]``."""
        perm = np.asarray(perm)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(perm.shape[0])
        edges = [inv[a.edge_pairs()] for a in self.adjacency]
        return MultiRelationGraph.from_edge_lists(edges, self.features[perm], self.labels[perm])


def merge_relations(g: MultiRelationGraph) -> MultiRelationGraph:
    """Collapse all relations into a single deduplicated edge set."""
    edges = np.concatenate([a.edge_pairs() for a in g.adjacency] or [np.zeros((0, 2), np.int64)])
    return MultiRelationGraph((CSR.from_edges(edges, g.n_nodes),), g.features, g.labels)


@dataclass(frozen=True)
class HomophilyProfile:
    """Per-node heterophily/homophily; NaN marks nodes with no labeled neighbor."""

    hetero: np.ndarray
    homo: np.ndarray
    degree: np.ndarray

    @property
    def defined(self) -> np.ndarray:
        return ~np.isnan(self.homo)


def homophily_profile(g: MultiRelationGraph, relation=MERGED, labels=None) -> HomophilyProfile:
    """Fraction of same-label neighbors per node.

    Neighbors labeled -1 count in neither numerator nor denominator. Nodes
    with no labeled neighbor get NaN in both ``hetero`` and ``homo``.
    """
    adj = g.relation(relation)
    labels = g.labels if labels is None else np.asarray(labels, dtype=np.int64)
    if labels.shape != (g.n_nodes,):
        raise ValueError("need one label per node")
    n_same, n_valid = _kernels.same_label_counts(adj.indptr, adj.indices, labels)
    homo = np.full(g.n_nodes, np.nan)
    ok = n_valid > 0
    homo[ok] = n_same[ok] / n_valid[ok]
    hetero = np.full(g.n_nodes, np.nan)
    hetero[ok] = 1.0 - homo[ok]
    return HomophilyProfile(hetero=hetero, homo=homo, degree=adj.degree())


# ---------------------------------------------------------------------------
# dataset directory I/O
# ---------------------------------------------------------------------------

_EDGE_FILE = re.compile(r"edges_(\d+)\.csv$")


def _load_matrix(path: Path, dtype, what: str, err=RaggedFeaturesError) -> np.ndarray:
    if not path.is_file():
        raise MissingFileError(f"{path}: missing {what} file")
    text = path.read_text(encoding="utf-8")
    rows = [ln for ln in text.split("\n")]
    if rows and rows[-1] == "":
        rows.pop()
    if not rows:
        return np.zeros((0, 0), dtype=dtype)
    width = None
    out = []
    for lineno, ln in enumerate(rows, 1):
        parts = ln.split(",")
        if width is None:
            width = len(parts)
        elif len(parts) != width:
            raise err(f"{path}:{lineno}: expected {width} fields, got {len(parts)}")
        try:
            out.append([dtype(p) for p in parts])
        except ValueError as exc:
            raise err(f"{path}:{lineno}: {exc}") from None
    return np.array(out, dtype=np.float64 if dtype is float else np.int64)


def _fast_load(path: Path, dtype, what: str, err=RaggedFeaturesError) -> np.ndarray:
    if not path.is_file():
        raise MissingFileError(f"{path}: missing {what} file")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            arr = np.loadtxt(path, delimiter=",", dtype=dtype, ndmin=2, encoding="utf-8")
    except ValueError:
        # slow path pinpoints the offending line
        arr = _load_matrix(path, float if dtype is np.float64 else int, what, err)
    return arr


def load_graph(dir_path) -> MultiRelationGraph:
    d = Path(dir_path)
    feats = _fast_load(d / "features.csv", np.float64, "features")
    n = feats.shape[0]

    lab_path = d / "labels.csv"
    labels = _fast_load(lab_path, np.float64, "labels", LabelValueError)
    if labels.shape[1] != 1 and labels.size:
        raise LabelValueError(f"{lab_path}: expected one value per line")
    labels = labels.reshape(-1)
    bad = np.flatnonzero(~np.isin(labels, (-1, 0, 1)))
    if bad.size:
        raise LabelValueError(f"{lab_path}:{bad[0] + 1}: label {labels[bad[0]]:g} not in {{-1,0,1}}")
    if labels.shape[0] != n:
        raise LabelValueError(f"{lab_path}: {labels.shape[0]} labels for {n} feature rows")

    meta_path = d / "meta.json"
    present = sorted(int(m.group(1)) for p in d.iterdir() if (m := _EDGE_FILE.match(p.name)))
    if meta_path.is_file():
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        if meta.get("n_nodes", n) != n:
            raise MetaMismatchError(f"{meta_path}: n_nodes={meta['n_nodes']} but features.csv has {n} rows")
        n_rel = int(meta["n_relations"])
    else:
        n_rel = len(present)
    if n_rel < 1:
        raise MissingFileError(f"{d}: no edges_<r>.csv files")

    edge_lists = []
    for r in range(n_rel):
        p = d / f"edges_{r}.csv"
        e = _fast_load(p, np.int64, f"relation {r} edge", EdgeIndexError)
        if e.size == 0:
            e = np.zeros((0, 2), dtype=np.int64)
        if e.shape[1] != 2:
            raise EdgeIndexError(f"{p}: expected 'src,dst' pairs")
        bad = np.flatnonzero((e < 0).any(axis=1) | (e >= n).any(axis=1))
        if bad.size:
            raise EdgeIndexError(f"{p}:{bad[0] + 1}: endpoint out of range [0, {n})")
        edge_lists.append(e)
    return MultiRelationGraph.from_edge_lists(edge_lists, feats, labels.astype(np.int64))


def save_graph(g: MultiRelationGraph, dir_path) -> Path:
    d = Path(dir_path)
    d.mkdir(parents=True, exist_ok=True)
    # repr() round-trips float64 exactly
    with open(d / "features.csv", "w", encoding="utf-8", newline="\n") as fh:
        for row in g.features:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")
    np.savetxt(d / "labels.csv", g.labels, fmt="%d")
    for r, adj in enumerate(g.adjacency):
        np.savetxt(d / f"edges_{r}.csv", adj.edge_pairs(), fmt="%d", delimiter=",")
    (d / "meta.json").write_text(json.dumps({"n_nodes": g.n_nodes, "n_relations": g.n_relations}) + "\n")
    return d
