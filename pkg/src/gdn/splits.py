"""Train/valid/test split construction (stratified and homophily-biased) and
structural-shift diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .graph import MERGED, MultiRelationGraph, homophily_profile

TRAIN, VALID, TEST, EXCLUDED = 0, 1, 2, -1
ROLE_NAMES = {TRAIN: "train", VALID: "valid", TEST: "test"}
ROLE_CODES = {v: k for k, v in ROLE_NAMES.items()}
DEFAULT_RATIOS = (0.4, 0.2, 0.4)
ISOLATED_WEIGHT = 0.5
HIST_BINS = 20
HIST_EPS = 1e-6
BETA_CLIP = 1e-6
CLASS_NAMES = {1: "anomaly", 0: "normal"}


@dataclass
class SplitAssignment:
    role: np.ndarray
    mode: str = "normal"
    seed: int | None = None
    ratios: tuple = DEFAULT_RATIOS
    observe_prob: np.ndarray | None = None
    warnings: list = field(default_factory=list)

    def mask(self, role: int) -> np.ndarray:
        return self.role == role

    @property
    def train(self) -> np.ndarray:
        return self.role == TRAIN

    @property
    def valid(self) -> np.ndarray:
        return self.role == VALID

    @property
    def test(self) -> np.ndarray:
        return self.role == TEST

    @property
    def observed(self) -> np.ndarray:
        return (self.role == TRAIN) | (self.role == VALID)


def _check_ratios(ratios):
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three nonnegative fractions summing to 1, got {ratios}")
    return ratios


def _round(x: float) -> int:
    return int(math.floor(x + 0.5))


def _class_nodes(g: MultiRelationGraph, n_buckets: int):
    out = {}
    for c in (0, 1):
        nodes = np.flatnonzero(g.labels == c)
        if nodes.size < n_buckets:
            raise ValueError(f"class {c} has {nodes.size} labeled nodes, fewer than {n_buckets} split buckets")
        out[c] = nodes
    return out


def _partition(order: np.ndarray, n_first: int, n_second: int, role: np.ndarray):
    role[order[:n_first]] = TRAIN
    role[order[n_first : n_first + n_second]] = VALID
    role[order[n_first + n_second :]] = TEST


def stratified_split(g: MultiRelationGraph, ratios=DEFAULT_RATIOS, seed: int = 0) -> SplitAssignment:
    """Per class: seeded shuffle, then cut by ``ratios``."""
    ratios = _check_ratios(ratios)
    rng = np.random.default_rng(seed)
    role = np.full(g.n_nodes, EXCLUDED, dtype=np.int64)
    for c, nodes in _class_nodes(g, sum(r > 0 for r in ratios)).items():
        n = nodes.size
        order = rng.permutation(nodes)
        _partition(order, _round(ratios[0] * n), _round(ratios[1] * n), role)
    return SplitAssignment(role, "normal", seed, ratios)


def observe_weights(g: MultiRelationGraph, relation=MERGED) -> np.ndarray:
    """Probability of being observed: the node's same-label neighbor fraction
    (0.5 for nodes without labeled neighbors)."""
    homo = homophily_profile(g, relation).homo
    return np.where(np.isnan(homo), ISOLATED_WEIGHT, homo)


def weighted_order(weights: np.ndarray, rng) -> np.ndarray:
    """A random order equal in law to sequential sampling without replacement
    with probability proportional to ``weights``; zero-weight items come last
    in uniformly random order."""
    u = rng.random(weights.size)
    tie = rng.random(weights.size)
    with np.errstate(divide="ignore"):
        key = np.where(weights > 0, np.log(u) / np.where(weights > 0, weights, 1.0), -np.inf)
    return np.lexsort((-tie, -key))


def biased_split(g: MultiRelationGraph, ratios=DEFAULT_RATIOS, seed: int = 0, relation=MERGED) -> SplitAssignment:
    """Observed pool (train + valid) drawn per class with probability
    proportional to homophily; the pool is then split train:valid uniformly."""
    ratios = _check_ratios(ratios)
    rng = np.random.default_rng(seed)
    weights = observe_weights(g, relation)
    role = np.full(g.n_nodes, EXCLUDED, dtype=np.int64)
    notes = []
    obs_frac = ratios[0] + ratios[1]
    for c, nodes in _class_nodes(g, sum(r > 0 for r in ratios)).items():
        w = weights[nodes]
        if not np.any(w > 0):
            notes.append(f"class {c}: all observation weights zero, sampled uniformly")
            w = np.ones_like(w)
        pool_order = nodes[weighted_order(w, rng)]
        n_obs = _round(obs_frac * nodes.size)
        pool = rng.permutation(pool_order[:n_obs])
        n_train = _round(ratios[0] / obs_frac * n_obs) if obs_frac > 0 else 0
        role[pool[:n_train]] = TRAIN
        role[pool[n_train:]] = VALID
        role[pool_order[n_obs:]] = TEST
    return SplitAssignment(role, "biased", seed, ratios, observe_prob=weights, warnings=notes)


def make_split(g: MultiRelationGraph, mode: str, ratios=DEFAULT_RATIOS, seed: int = 0) -> SplitAssignment:
    if mode == "normal":
        return stratified_split(g, ratios, seed)
    if mode == "biased":
        return biased_split(g, ratios, seed)
    raise ValueError(f"unknown split mode {mode!r}")


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------


def smoothed_histogram(values, bins: int = HIST_BINS, eps: float = HIST_EPS) -> np.ndarray:
    counts, _ = np.histogram(values, bins=bins, range=(0.0, 1.0))
    p = counts / max(counts.sum(), 1)
    p = p + eps
    return p / p.sum()


def kl_divergence(p, q) -> float:
    p, q = np.asarray(p, dtype=np.float64), np.asarray(q, dtype=np.float64)
    pos = p > 0
    return float(np.sum(p[pos] * (np.log(p[pos]) - np.log(q[pos]))))


def beta_moments(values):
    """Method-of-moments Beta(alpha, beta) fit; None when undefined."""
    x = np.clip(np.asarray(values, dtype=np.float64), BETA_CLIP, 1 - BETA_CLIP)
    if x.size < 2:
        return None
    m, v = x.mean(), x.var(ddof=1)
    if np.ptp(x) == 0 or v <= 0:
        return None
    common = m * (1 - m) / v - 1
    if common <= 0:
        return None
    return float(m * common), float((1 - m) * common)


@dataclass
class SdsReport:
    classes: dict
    kl_extent: dict
    bins: int = HIST_BINS

    def to_json(self) -> dict:
        return {"bins": self.bins, "kl_extent": self.kl_extent, "classes": self.classes}


def sds_report(g: MultiRelationGraph, split: SplitAssignment, bins: int = HIST_BINS, relation=MERGED) -> SdsReport:
    """Observed-vs-test homophily distributions per class and their KL extent
    KL(test || observed)."""
    homo = homophily_profile(g, relation).homo
    defined = ~np.isnan(homo)
    classes, kl = {}, {}
    groups = {name: g.labels == c for c, name in CLASS_NAMES.items()}
    groups["all"] = g.labels >= 0
    for name, in_class in groups.items():
        envs = {}
        for env, emask in (("observed", split.observed), ("test", split.test)):
            vals = homo[in_class & emask & defined]
            if vals.size == 0:
                envs[env] = None
                continue
            envs[env] = {
                "n": int(vals.size),
                "mean_homo": float(vals.mean()),
                "mean_hetero": float(1.0 - vals.mean()),
                "histogram": smoothed_histogram(vals, bins).tolist(),
                "beta": beta_moments(vals),
            }
        classes[name] = envs
        if envs["observed"] is None or envs["test"] is None:
            kl[name] = None
        else:
            kl[name] = kl_divergence(envs["test"]["histogram"], envs["observed"]["histogram"])
    return SdsReport(classes, kl, bins)


# ---------------------------------------------------------------------------
# split file I/O
# ---------------------------------------------------------------------------


def save_split(split: SplitAssignment, path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("node_id,role\n")
        for v in np.flatnonzero(split.role >= 0):
            fh.write(f"{v},{ROLE_NAMES[int(split.role[v])]}\n")
    return path


def load_split(path, n_nodes: int, mode: str = "file") -> SplitAssignment:
    role = np.full(n_nodes, EXCLUDED, dtype=np.int64)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line == "node_id,role":
                continue
            node, _, name = line.partition(",")
            try:
                v = int(node)
                code = ROLE_CODES[name]
            except (ValueError, KeyError):
                raise DataError(f"{path}:{lineno}: bad split line {line!r}") from None
            if not 0 <= v < n_nodes:
                raise DataError(f"{path}:{lineno}: node {v} out of range")
            role[v] = code
    return SplitAssignment(role, mode)
