import csv
import json

import numpy as np
import pytest

from revib import cli, dataio, linear, metrics, synthetic
from revib.config import RunConfig


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def tiny(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = RunConfig()
    cfg.model.d, cfg.model.n_heads = 8, 2
    cfg.train.epochs, cfg.train.batch_size, cfg.train.k_train, cfg.train.k_eval = 1, 16, 3, 3
    (root / "cfg.json").write_text(cfg.dumps())
    assert run("prepare", "--config", root / "cfg.json", "--synthetic", "avoid", "--n-scenes", 10,
               "--seed", 0, "--out", root / "data.json") == 0
    assert run("train", "--config", root / "cfg.json", "--data", root / "data.json",
               "--run-dir", root / "run") == 0
    return root


# ---------------------------------------------------------------- prepare


def test_prepare_empty_dir_is_usage_error(tmp_path, capsys):
    (tmp_path / "in").mkdir()
    assert run("prepare", "--input", tmp_path / "in", "--out", tmp_path / "c.json") == 2
    assert "no .txt scene files" in capsys.readouterr().err


def test_prepare_nothing_given(tmp_path):
    assert run("prepare", "--out", tmp_path / "c.json") == 2


def test_prepare_bad_scene_file(tmp_path, capsys):
    (tmp_path / "bad.txt").write_text("0 1 zero 0\n")
    assert run("prepare", "--input", tmp_path / "bad.txt", "--out", tmp_path / "c.json") == 2
    assert "bad.txt:1" in capsys.readouterr().err


def test_prepare_synthetic_is_deterministic(tmp_path):
    for name in ("a", "b"):
        assert run("prepare", "--synthetic", "linear,avoid", "--n-scenes", 4, "--seed", 7,
                   "--out", tmp_path / f"{name}.json") == 0
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    rep = json.loads((tmp_path / "a.json.report.json").read_text())
    assert rep["sha256"] == dataio.file_sha256(tmp_path / "a.json") and rep["scenes"] == 8


def test_prepare_from_files_equals_fresh_windowing(tmp_path):
    scenes = synthetic.generate_synthetic("avoid", 3, 1)
    (tmp_path / "in").mkdir()
    for i, sc in enumerate(scenes):
        dataio.save_scene(sc, tmp_path / "in" / f"s{i}.txt")
    assert run("prepare", "--input", tmp_path / "in", "--out", tmp_path / "c.json") == 0
    cfg = RunConfig().data
    fresh = [s for p in sorted((tmp_path / "in").glob("*.txt"))
             for s in dataio.make_samples(dataio.load_scene(p, cfg.frame_interval), cfg)]
    loaded, _, meta = dataio.load_cache(tmp_path / "c.json")
    assert (tmp_path / "c.json").read_bytes() == dataio.dumps_cache(fresh, cfg, meta)
    assert len(loaded) == len(fresh)


def test_unknown_synthetic_kind(tmp_path):
    assert run("prepare", "--synthetic", "swarm", "--out", tmp_path / "c.json") == 2


# ---------------------------------------------------------------- config and seeds


def test_dump_config_round_trips(capsys):
    assert run("--dump-config") == 0
    text = capsys.readouterr().out
    cfg = RunConfig.from_dict(json.loads(text))
    assert cfg.dumps() == text
    assert cfg.model.transform == "haar" and cfg.model.n_way == 4 and cfg.model.n_theta == 8
    assert (cfg.data.t_h, cfg.data.t_f, cfg.train.k_eval) == (8, 12, 20)


def test_bad_config_is_usage_error(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"model": {"d": 9, "n_heads": 2}}))
    assert run("train", "--config", tmp_path / "c.json", "--data", tmp_path / "x",
               "--run-dir", tmp_path / "r") == 2
    (tmp_path / "c.json").write_text(json.dumps({"modle": {}}))
    assert run("train", "--config", tmp_path / "c.json", "--data", tmp_path / "x",
               "--run-dir", tmp_path / "r") == 2


def test_env_seed_override(tmp_path, monkeypatch):
    monkeypatch.setenv("REVIB_SEED", "7")
    assert run("prepare", "--synthetic", "avoid", "--n-scenes", 2, "--out", tmp_path / "e.json") == 0
    monkeypatch.delenv("REVIB_SEED")
    assert run("prepare", "--synthetic", "avoid", "--n-scenes", 2, "--seed", 7,
               "--out", tmp_path / "s.json") == 0
    assert (tmp_path / "e.json").read_bytes() == (tmp_path / "s.json").read_bytes()
    monkeypatch.setenv("REVIB_SEED", "x")
    assert run("prepare", "--synthetic", "avoid", "--out", tmp_path / "f.json") == 2


def test_bad_threads():
    assert run("--threads", 0, "prepare", "--out", "x") == 2


# ---------------------------------------------------------------- train / eval / predict


def test_train_artifacts(tiny):
    man = json.loads((tiny / "run" / "manifest.json").read_text())
    assert man["checkpoint_sha256"] == dataio.file_sha256(tiny / "run" / "checkpoint.bin")
    assert man["dataset_sha256"] == dataio.file_sha256(tiny / "data.json")
    assert len(man["loss_curve"]) == 1 and man["config"]["model"]["d"] == 8
    rows = list(csv.reader(open(tiny / "run" / "loss_curve.csv")))
    assert rows[0] == ["epoch", "loss"] and len(rows) == 3


def test_missing_files_exit_2(tiny, tmp_path):
    assert run("eval", "--checkpoint", tmp_path / "none.bin", "--data", tiny / "data.json",
               "--out", tmp_path) == 2
    assert run("eval", "--checkpoint", tiny / "run" / "checkpoint.bin", "--data",
               tmp_path / "none.json", "--out", tmp_path) == 2
    assert run("train", "--data", tmp_path / "none.json", "--run-dir", tmp_path / "r") == 2
    (tmp_path / "junk.bin").write_bytes(b"not a checkpoint")
    assert run("predict", "--checkpoint", tmp_path / "junk.bin", "--data", tiny / "data.json",
               "--out", tmp_path / "p.csv") == 2


def test_linear_baseline_reproduces_linear_metrics(tiny, tmp_path):
    assert run("eval", "--checkpoint", tiny / "run" / "checkpoint.bin", "--data",
               tiny / "data.json", "--baseline", "linear", "--out", tmp_path) == 0
    doc = json.loads((tmp_path / "metrics.json").read_text())
    cfg = RunConfig.load(tiny / "cfg.json")
    samples, _, _ = dataio.load_cache(tiny / "data.json")
    test = dataio.split(samples, cfg.data.split, cfg.train.seed)[2]
    F = np.stack([s.ego_future for s in test])
    P = np.stack([linear.linear_pair(s.ego_obs, 12).base for s in test])[:, None]
    want = metrics.report(F, P, [str(i) for i in range(len(test))])
    assert doc["K"] == 1 and doc["n_samples"] == len(test)
    assert doc["minADE"] == pytest.approx(want.mean_ade, abs=1e-12)
    assert doc["minFDE"] == pytest.approx(want.mean_fde, abs=1e-12)


def test_eval_is_idempotent(tiny, tmp_path):
    for name in ("a", "b"):
        assert run("eval", "--checkpoint", tiny / "run" / "checkpoint.bin", "--data",
                   tiny / "data.json", "--out", tmp_path / name) == 0
    for f in ("metrics.json", "per_sample.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_predict_row_count(tiny, tmp_path):
    assert run("predict", "--checkpoint", tiny / "run" / "checkpoint.bin", "--data",
               tiny / "data.json", "--split", "all", "--samples", "0:4", "--K", 5,
               "--out", tmp_path / "p.csv") == 0
    rows = list(csv.DictReader(open(tmp_path / "p.csv")))
    assert len(rows) == 4 * 5 * 12
    r = rows[0]
    total = float(r["base_x"]) + float(r["self_x"]) + float(r["re_x"])
    assert float(r["x"]) == pytest.approx(total, abs=1e-12)
    assert {int(r["step"]) for r in rows} == set(range(9, 21))


@pytest.mark.parametrize("what", ["energy", "angles", "grid", "pca", "contrib"])
def test_diagnose_subcommands(tiny, tmp_path, what):
    out = tmp_path / f"{what}.csv"
    assert run("diagnose", what, "--checkpoint", tiny / "run" / "checkpoint.bin", "--data",
               tiny / "data.json", "--samples", "0:6", "--K", 4, "--half-width", 2,
               "--resolution", 1, "--out", out) == 0
    header = next(csv.reader(open(out)))
    assert header == {"energy": ["term", "share_percent"],
                      "angles": ["sample_id", "theta_s", "theta_r"],
                      "grid": ["x", "y", "c", "at_ego"],
                      "pca": ["sample_id", "neighbor_id", "pc1", "pc2"],
                      "contrib": ["sample_id", "partition", "count", "resonance_energy",
                                  "position_energy"]}[what]
    if what == "grid":
        assert sum(1 for _ in open(out)) == 26
