"""Synthetic multi-relation graphs with planted anomaly features and
per-class homophily."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import MultiRelationGraph


def default_informative(d: int, n_informative: int) -> tuple[int, ...]:
    """Evenly spaced dims, offset from the edges (e.g. d=16, 4 -> 2, 6, 10, 14)."""
    if n_informative == 0:
        return ()
    step = d // n_informative
    return tuple(int(i * step + step // 2) for i in range(n_informative))


@dataclass(frozen=True)
class SynthSpec:
    n_nodes: int = 2000
    anomaly_ratio: float = 0.1
    n_relations: int = 2
    # scalar or one value per relation
    h_anomaly: float | tuple = 0.2
    h_normal: float | tuple = 0.95
    mean_degree: float = 10.0
    feature_dim: int = 16
    n_informative: int = 4
    informative_dims: tuple | None = None
    signal: float = 1.0
    noise_std: float = 1.0
    seed: int = 0
    extra: dict = field(default_factory=dict, compare=False)

    def informative(self) -> tuple[int, ...]:
        if self.informative_dims is not None:
            return tuple(int(i) for i in self.informative_dims)
        return default_informative(self.feature_dim, self.n_informative)

    def homophily(self, relation: int) -> tuple[float, float]:
        """(h_normal, h_anomaly) for ``relation``."""
        def pick(h):
            return float(h[relation]) if isinstance(h, (tuple, list)) else float(h)

        return pick(self.h_normal), pick(self.h_anomaly)

    def validate(self):
        if not 0 < self.anomaly_ratio < 1:
            raise ValueError("anomaly_ratio must be in (0, 1)")
        if self.anomaly_ratio * self.n_nodes < 2:
            raise ValueError("anomaly_ratio * n_nodes must be >= 2")
        inf = self.informative()
        if len(inf) > self.feature_dim or any(not 0 <= i < self.feature_dim for i in inf):
            raise ValueError("informative dims must be distinct indices below feature_dim")
        if len(set(inf)) != len(inf):
            raise ValueError("informative dims must be distinct")
        if self.n_relations < 1 or self.mean_degree <= 0:
            raise ValueError("need n_relations >= 1 and mean_degree > 0")
        for r in range(self.n_relations):
            for h in self.homophily(r):
                if not 0 <= h <= 1:
                    raise ValueError("homophily must lie in [0, 1]")


def class_degrees(n_normal: int, n_anom: int, h_normal: float, h_anom: float, mean_degree: float):
    """Per-class target degrees making both homophily targets consistent.

    Cross-class edge endpoints must balance:
    n_anom * deg_anom * (1 - h_anom) == n_normal * deg_normal * (1 - h_normal).
    """
    xa, xn = 1.0 - h_anom, 1.0 - h_normal
    n = n_normal + n_anom
    if xa == 0 and xn == 0:
        return mean_degree, mean_degree
    if xa == 0 or xn == 0:
        raise ValueError("homophily 1 for one class requires homophily 1 for the other")
    ratio = (n_normal * xn) / (n_anom * xa)  # deg_anom / deg_normal
    deg_normal = mean_degree * n / (n_normal + n_anom * ratio)
    return deg_normal, deg_normal * ratio


def _pairs_within(rng, members, count):
    a = rng.choice(members, size=count)
    b = rng.choice(members, size=count)
    return np.stack([a, b], axis=1)


def generate(spec: SynthSpec) -> MultiRelationGraph:
    """Class-conditioned degree-targeted edge pairing plus Gaussian features.

    Informative dims are N(+signal, noise) for anomalies and N(-signal, noise)
    for normals; the remaining dims are N(0, noise).
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n = spec.n_nodes
    n_anom = max(2, int(round(spec.anomaly_ratio * n)))
    labels = np.zeros(n, dtype=np.int64)
    labels[rng.choice(n, size=n_anom, replace=False)] = 1
    anom = np.flatnonzero(labels == 1)
    norm = np.flatnonzero(labels == 0)
    if anom.size == 0 or norm.size == 0:
        raise ValueError("a target class is empty")

    edge_lists = []
    for r in range(spec.n_relations):
        h_n, h_a = spec.homophily(r)
        deg_n, deg_a = class_degrees(norm.size, anom.size, h_n, h_a, spec.mean_degree)
        if deg_a * h_a > anom.size - 1 or deg_n * h_n > norm.size - 1:
            raise ValueError(f"relation {r}: target degree exceeds class size")
        n_aa = int(round(anom.size * deg_a * h_a / 2))
        n_nn = int(round(norm.size * deg_n * h_n / 2))
        n_an = int(round(anom.size * deg_a * (1 - h_a)))
        cross = np.stack([rng.choice(anom, size=n_an), rng.choice(norm, size=n_an)], axis=1)
        edges = np.concatenate([_pairs_within(rng, anom, n_aa), _pairs_within(rng, norm, n_nn), cross])
        edge_lists.append(edges)

    d = spec.feature_dim
    x = rng.normal(0.0, spec.noise_std, size=(n, d))
    inf = list(spec.informative())
    if inf:
        sign = np.where(labels == 1, 1.0, -1.0)[:, None]
        x[:, inf] += sign * spec.signal
    return MultiRelationGraph.from_edge_lists(edge_lists, x, labels)
