"""Command line entry point: ``gdn generate|split|train|evaluate|analyze``.

Exit codes: 0 ok, 1 usage, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import analysis, config, metrics
from .errors import DataError, NumericError
from .graph import load_graph, save_graph
from .models import load_checkpoint, save_checkpoint
from .separation import FeatureMask
from .splits import load_split, make_split, save_split, sds_report
from .synth import generate
from .train import choose_threshold, predict, train_seed

log = logging.getLogger("gdn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n", encoding="utf-8")
    return path


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not JSON serializable: {type(o)}")


def _raw_config(args) -> dict:
    raw = config.read_config_file(args.config) if args.config else {}
    for item in args.override or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--override expects key=value, got {item!r}")
        raw[key.strip()] = value.strip()
    return raw


def _load_dataset(cfg: config.RunConfig):
    if not cfg.dataset_dir:
        raise UsageError("dataset_dir is required")
    return load_graph(cfg.dataset_dir)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_generate(raw: dict, out: Path) -> dict:
    spec = config.synth_spec(raw)
    g = generate(spec)
    save_graph(g, out)
    return {"n_nodes": g.n_nodes, "n_relations": g.n_relations, "informative_dims": list(spec.informative())}


def _histogram_csv(report, path: Path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class", "environment", "bin", "bin_lo", "bin_hi", "density"])
        for cls, envs in report.classes.items():
            for env, body in envs.items():
                if body is None:
                    continue
                for b, p in enumerate(body["histogram"]):
                    w.writerow([cls, env, b, b / report.bins, (b + 1) / report.bins, repr(p)])


def cmd_split(raw: dict, out: Path) -> dict:
    cfg = config.run_config(raw)
    g = _load_dataset(cfg)
    seed = cfg.split_seed if cfg.split_seed is not None else cfg.seeds[0]
    split = make_split(g, cfg.split_mode, cfg.ratios, seed)
    save_split(split, out / "split.csv")
    report = sds_report(g, split)
    _histogram_csv(report, out / "homophily_hist.csv")
    body = {
        "mode": split.mode,
        "seed": seed,
        "ratios": list(split.ratios),
        "warnings": split.warnings,
        "counts": {name: int(np.sum(split.role == code)) for code, name in enumerate(("train", "valid", "test"))},
        "sds": report.to_json(),
    }
    _write_json(out / "report.json", body)
    return body


def _seed_metrics(result, cfg: config.RunConfig) -> dict:
    body = result.metrics.to_json()
    body.update(seed=result.seed, split_mode=result.split.mode, config_hash=cfg.config_hash())
    return body


def _train_many(g, cfg: config.RunConfig, split=None):
    runs, failures = [], []
    for seed in cfg.seeds:
        try:
            runs.append(train_seed(g, cfg, seed, split))
        except NumericError as exc:
            log.error("seed %s failed: %s", seed, exc)
            failures.append({"seed": seed, "error": str(exc)})
    return runs, failures


def _parse_grid(items) -> dict:
    grid = {}
    for item in items or []:
        key, sep, values = item.partition("=")
        if not sep or key not in ("lam", "k", "tau"):
            raise UsageError(f"--grid expects lam=..., k=... or tau=..., got {item!r}")
        grid[key] = [v.strip() for v in values.split(",") if v.strip()]
    return grid


def cmd_train(raw: dict, out: Path, grid_items=None) -> tuple[dict, int]:
    t0 = time.perf_counter()
    cfg = config.run_config(raw)
    g = _load_dataset(cfg)
    cfg.validate(g.n_features)
    split = load_split(cfg.split_file, g.n_nodes, cfg.split_mode) if cfg.split_file else None

    grid = _parse_grid(grid_items)
    grid_table = []
    if grid:
        best_score, best_raw = -np.inf, None
        for combo in itertools.product(*grid.values()):
            trial_raw = dict(raw, **dict(zip(grid, combo)))
            trial = config.run_config(trial_raw)
            runs, _ = _train_many(g, trial, split)
            score = float(np.mean([r.best_val_auc for r in runs])) if runs else -np.inf
            grid_table.append({"params": dict(zip(grid, combo)), "mean_val_auc": score})
            if score > best_score:
                best_score, best_raw = score, trial_raw
        cfg = config.run_config(best_raw)

    runs, failures = _train_many(g, cfg, split)
    per_seed = []
    for r in runs:
        seed_dir = out / f"seed_{r.seed}"
        m = _seed_metrics(r, cfg)
        _write_json(seed_dir / "metrics.json", m)
        save_split(r.split, seed_dir / "split.csv")
        save_checkpoint(
            seed_dir,
            r.params,
            r.backbone,
            extra={
                "seed": r.seed,
                "split_mode": r.split.mode,
                "config_hash": cfg.config_hash(),
                "threshold_mode": cfg.threshold_mode,
            },
        )
        mask_body = {"seed": r.seed, "mask": r.mask.to_json() if r.mask else None}
        if r.prototype is not None:
            mask_body["prototype"] = {"plus": r.prototype.plus, "minus": r.prototype.minus, "tau": r.prototype.tau}
        _write_json(seed_dir / "mask.json", mask_body)
        per_seed.append(
            {
                "metrics": m,
                "best_epoch": r.best_epoch,
                "best_val_auc": r.best_val_auc,
                "epochs_run": len(r.loss_trace),
                "loss_trace": r.loss_trace,
                "capped_epochs": r.capped_epochs,
                "mask": r.mask.to_json() if r.mask else None,
                "sds": sds_report(g, r.split).to_json(),
                "wall_clock": r.wall_clock,
            }
        )
    summary = {"config": cfg.to_json(), "config_hash": cfg.config_hash(), "runs": [p["metrics"] for p in per_seed]}
    if len(runs) >= 2:
        summary["aggregate"] = metrics.aggregate_runs([r.metrics for r in runs])
    summary["failures"] = failures
    _write_json(out / "metrics.json", summary)
    report = dict(summary, seeds=per_seed, grid=grid_table, wall_clock=time.perf_counter() - t0)
    _write_json(out / "report.json", report)
    return report, (EXIT_NUMERIC if failures else EXIT_OK)


def _read_scores(path, n_nodes: int) -> np.ndarray:
    scores = np.full(n_nodes, np.nan)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("node_id"):
                continue
            node, _, value = line.partition(",")
            try:
                scores[int(node)] = float(value)
            except (ValueError, IndexError):
                raise DataError(f"{path}:{lineno}: bad score line {line!r}") from None
    return scores


def cmd_evaluate(raw: dict, out: Path) -> dict:
    extra = {k: raw.pop(k) for k in ("checkpoint", "scores_file") if k in raw}
    cfg = config.run_config(raw)
    g = _load_dataset(cfg)
    if not cfg.split_file:
        raise UsageError("evaluate needs split_file")
    split = load_split(cfg.split_file, g.n_nodes, cfg.split_mode)
    if "scores_file" in extra:
        scores = _read_scores(extra["scores_file"], g.n_nodes)
        if np.isnan(scores[split.test]).any():
            raise DataError("scores file misses test nodes")
        meta = {"seed": None, "split_mode": cfg.split_mode, "config_hash": None, "threshold_mode": cfg.threshold_mode}
    elif "checkpoint" in extra:
        params, backbone, meta = load_checkpoint(extra["checkpoint"])
        scores = predict(g, params, backbone)
    else:
        raise UsageError("evaluate needs checkpoint or scores_file")
    mode = meta.get("threshold_mode", cfg.threshold_mode)
    threshold = choose_threshold(mode, scores, g.labels, split.valid)
    body = metrics.evaluate(scores, g.labels, split.test, threshold).to_json()
    body.update(seed=meta.get("seed"), split_mode=meta.get("split_mode"), config_hash=meta.get("config_hash"))
    _write_json(out / "metrics.json", body)
    return body


def cmd_analyze(raw: dict, out: Path) -> dict:
    opts = {k: raw.pop(k) for k in list(raw) if k in config.ANALYSIS_KEYS}
    cfg = config.run_config(raw)
    g = _load_dataset(cfg)
    dirs = [Path(p.strip()) for p in opts.get("checkpoints", opts.get("checkpoint", "")).split(",") if p.strip()]
    if not dirs:
        raise UsageError("analyze needs checkpoints=<seed_dir>[,<seed_dir>...]")
    lr_kwargs = {"lr": float(opts.get("lr_lr", 0.1)), "epochs": int(opts.get("lr_epochs", 300))}
    lp_kwargs = {
        "knn_k": int(opts.get("knn_k", 10)),
        "iters": int(opts.get("lp_iters", 50)),
        "alpha": float(opts.get("lp_alpha", 0.85)),
    }
    per_run, masks = [], []
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "scores.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["checkpoint", "dim", "score", "selected"])
        for d in dirs:
            params, backbone, meta = load_checkpoint(d)
            mask_obj = json.loads((d / "mask.json").read_text())["mask"]
            if mask_obj is None:
                raise DataError(f"{d}: run has no feature mask (trained without separation?)")
            mask = FeatureMask.from_json(mask_obj)
            masks.append(mask)
            split = load_split(d / "split.csv", g.n_nodes, meta.get("split_mode", "file"))
            variants = analysis.feature_variants(g, params, backbone, mask)
            table = analysis.feature_quality(
                variants, g.labels, split.train, split.test, seed=meta.get("seed") or 0,
                lr_kwargs=lr_kwargs, lp_kwargs=lp_kwargs,
            )
            per_run.append({"checkpoint": str(d), "seed": meta.get("seed"), **table})
            for j, s in enumerate(mask.scores):
                w.writerow([str(d), j, repr(float(s)), int(j in set(mask.class_idx.tolist()))])
    mean = {
        probe: {tag: float(np.mean([r[probe][tag] for r in per_run])) for tag in analysis.VARIANTS}
        for probe in ("LR", "LP")
    }
    body = {"runs": per_run, "mean": mean}
    if len(masks) >= 2:
        body["stability"] = analysis.stability_report(masks)
    _write_json(out / "analysis.json", body)
    if "stability" in body:
        _write_json(out / "stability.json", body["stability"])
    return body


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gdn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name in ("generate", "split", "train", "evaluate", "analyze"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="UTF-8 file of 'key = value' lines")
        p.add_argument("--override", action="append", metavar="KEY=VALUE")
        p.add_argument("--out", required=True, help="output directory")
        if name == "train":
            p.add_argument("--grid", action="append", metavar="KEY=V1,V2",
                           help="tune lam, k or tau on mean validation AUC")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError("missing command")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
        raw = _raw_config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        code = EXIT_OK
        if args.command == "generate":
            cmd_generate(raw, out)
        elif args.command == "split":
            cmd_split(raw, out)
        elif args.command == "train":
            _, code = cmd_train(raw, out, args.grid)
        elif args.command == "evaluate":
            cmd_evaluate(raw, out)
        else:
            cmd_analyze(raw, out)
        return code
    except UsageError as exc:
        print(f"gdn: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as exc:
        print(f"gdn: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"gdn: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        # bad config values surface as ValueError from validation
        print(f"gdn: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
