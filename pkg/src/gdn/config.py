"""Run configuration and the ``key = value`` config file format."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import types
import typing
from dataclasses import dataclass
from pathlib import Path

from .synth import SynthSpec

LAMBDA_GRID = (0.01, 0.1, 0.5, 1.0)
THRESHOLD_MODES = ("fixed", "best_val_f1")


@dataclass
class RunConfig:
    dataset_dir: str = ""
    kind: str = "rgcn"
    hidden_dim: int = 64
    n_layers: int = 2
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0
    dropout: float = 0.0
    epochs: int = 200
    patience: int = 30
    gdn: bool = True
    lam: float = 0.1
    # None: a quarter of the feature dimension
    k: int | None = None
    tau: float = 1.0
    warmup: int = 5
    refresh_every: int = 1
    score_mode: str = "per_class"
    negatives: int = 5
    constrain_both_classes: bool = False
    split_mode: str = "normal"
    ratios: tuple = (0.4, 0.2, 0.4)
    # None: each run seed also seeds its split
    split_seed: int | None = None
    split_file: str = ""
    threshold_mode: str = "fixed"
    seeds: tuple = (0, 1, 2, 3, 4)

    def validate(self, n_features: int | None = None):
        if self.kind not in ("rgcn", "gcn"):
            raise ValueError(f"kind must be rgcn or gcn, got {self.kind!r}")
        if self.hidden_dim < 1 or self.n_layers < 1 or self.epochs < 0 or self.patience < 1:
            raise ValueError("hidden_dim, n_layers, patience must be >= 1 and epochs >= 0")
        if self.lr <= 0 or not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise ValueError("need lr > 0, momentum in [0, 1), weight_decay >= 0")
        if self.lam < 0 or self.tau <= 0 or self.warmup < 0 or self.refresh_every < 1 or self.negatives < 1:
            raise ValueError("need lam >= 0, tau > 0, warmup >= 0, refresh_every >= 1, negatives >= 1")
        if self.split_mode not in ("normal", "biased"):
            raise ValueError(f"split_mode must be normal or biased, got {self.split_mode!r}")
        if self.threshold_mode not in THRESHOLD_MODES:
            raise ValueError(f"threshold_mode must be one of {THRESHOLD_MODES}")
        if len(self.ratios) != 3 or abs(sum(self.ratios) - 1) > 1e-9:
            raise ValueError("ratios must be three fractions summing to 1")
        if not self.seeds:
            raise ValueError("at least one seed required")
        if n_features is not None and not 1 <= self.resolved_k(n_features) <= n_features:
            raise ValueError(f"k={self.k} outside [1, {n_features}]")
        return self

    def resolved_k(self, n_features: int) -> int:
        return self.k if self.k is not None else max(1, n_features // 4)

    def to_json(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}

    def config_hash(self) -> str:
        body = self.to_json()
        body.pop("seeds")
        blob = json.dumps(body, sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def _coerce(tp, raw: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union or origin is types.UnionType:
        if raw.lower() in ("none", "null", ""):
            return None
        for inner in (a for a in args if a is not type(None)):
            try:
                return _coerce(inner, raw)
            except ValueError:
                continue
        raise ValueError(f"cannot parse {raw!r} as {tp}")
    if tp is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if tp is int:
        return int(raw)
    if tp is float:
        return float(raw)
    if tp is tuple or origin is tuple:
        parts = [p.strip() for p in raw.strip("()[]").split(",") if p.strip()]
        return tuple(float(p) if any(ch in p for ch in ".eE") else int(p) for p in parts)
    return raw


def _field_types(cls):
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls) if not f.name.startswith("extra")}


def parse_kv_lines(lines) -> dict:
    out = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        out[key.strip()] = value.strip()
    return out


def read_config_file(path) -> dict:
    return parse_kv_lines(Path(path).read_text(encoding="utf-8").splitlines())


def build(cls, raw: dict, strict_extra=()):
    """Instantiate dataclass ``cls`` from string values, ignoring keys listed
    in ``strict_extra`` (keys other commands own) and rejecting the rest."""
    known = _field_types(cls)
    kwargs = {}
    for key, value in raw.items():
        if key in known:
            try:
                kwargs[key] = _coerce(known[key], value)
            except ValueError as exc:
                raise ValueError(f"config key {key!r}: {exc}") from None
        elif key not in strict_extra:
            raise ValueError(f"unknown config key {key!r}")
    return cls(**kwargs)


RUN_KEYS = frozenset(_field_types(RunConfig))
SYNTH_KEYS = frozenset(_field_types(SynthSpec))
ANALYSIS_KEYS = frozenset({"checkpoint", "checkpoints", "knn_k", "lp_iters", "lp_alpha", "lr_epochs", "lr_lr",
                           "scores_file", "analysis_seeds"})


def run_config(raw: dict) -> RunConfig:
    return build(RunConfig, raw, SYNTH_KEYS | ANALYSIS_KEYS).validate()


def synth_spec(raw: dict) -> SynthSpec:
    return build(SynthSpec, raw, RUN_KEYS | ANALYSIS_KEYS)
