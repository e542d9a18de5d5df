import pytest

from gdn.config import RunConfig, parse_kv_lines, read_config_file, run_config, synth_spec


def test_parse_lines_with_comments():
    raw = parse_kv_lines(["# header", "lam = 0.5  # trailing", "", "kind=gcn"])
    assert raw == {"lam": "0.5", "kind": "gcn"}
    with pytest.raises(ValueError, match="line 1"):
        parse_kv_lines(["nonsense"])


def test_file_roundtrip(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("dataset_dir = data\nseeds = 1,2,3\nk = 4\ngdn = false\nsplit_seed = none\n", encoding="utf-8")
    cfg = run_config(read_config_file(p))
    assert cfg.dataset_dir == "data" and cfg.seeds == (1, 2, 3)
    assert cfg.k == 4 and cfg.gdn is False and cfg.split_seed is None


def test_defaults():
    cfg = RunConfig()
    assert (cfg.hidden_dim, cfg.n_layers, cfg.lr, cfg.epochs, cfg.patience) == (64, 2, 0.01, 200, 30)
    assert (cfg.lam, cfg.tau, cfg.warmup, cfg.negatives, cfg.momentum) == (0.1, 1.0, 5, 5, 0.9)
    assert cfg.ratios == (0.4, 0.2, 0.4) and len(cfg.seeds) == 5
    assert cfg.resolved_k(32) == 8


def test_unknown_and_foreign_keys():
    with pytest.raises(ValueError, match="unknown"):
        run_config({"bogus": "1"})
    # keys owned by other commands are tolerated
    assert run_config({"n_nodes": "100", "knn_k": "5"}).lam == 0.1
    assert synth_spec({"lam": "0.3", "n_nodes": "100", "h_anomaly": "0.2,0.3"}).h_anomaly == (0.2, 0.3)


@pytest.mark.parametrize(
    "raw",
    [{"kind": "gat"}, {"lam": "-1"}, {"ratios": "0.5,0.5"}, {"split_mode": "weird"}, {"momentum": "1.0"},
     {"threshold_mode": "max"}, {"gdn": "maybe"}, {"hidden_dim": "x"}],
)
def test_invalid_values(raw):
    with pytest.raises(ValueError):
        run_config(raw)


def test_k_bounded_by_features():
    with pytest.raises(ValueError):
        RunConfig(k=20).validate(16)


def test_hash_ignores_seeds_only():
    a = RunConfig(seeds=(0, 1))
    assert a.config_hash() == RunConfig(seeds=(5,)).config_hash()
    assert a.config_hash() != RunConfig(lam=0.5).config_hash()
