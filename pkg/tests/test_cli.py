import json

import numpy as np
import pydot
import pytest

from archgrow.cli import main, read_config
from archgrow.data import MtsDataset, load_idx, write_idx, write_timeseries_csv
from archgrow.persist import load_model, model_hash


@pytest.fixture(scope="module")
def idx_pair(tmp_path_factory):
    d = tmp_path_factory.mktemp("idx")
    rng = np.random.default_rng(0)
    labels = np.arange(90) % 3
    centers = rng.integers(0, 256, size=(3, 6, 6))
    images = np.clip(centers[labels] + rng.normal(0, 40, size=(90, 6, 6)), 0, 255)
    write_idx(images, labels, d / "img", d / "lab")
    return d / "img", d / "lab"


def train_args(idx_pair, out, *extra):
    ip, lp = idx_pair
    return ["train", "--images", str(ip), "--labels", str(lp), "--out", str(out),
            "--generations", "3", "--epochs", "2", "--orchestrator", "constant",
            "--def-neu", "5", *extra]


def test_train_random_twice_identical(idx_pair, tmp_path):
    for name in ("a", "b"):
        assert main(train_args(idx_pair, tmp_path / name, "--policy", "random", "--seed", "0")) == 0
    for f in ("history.csv", "model.bin"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_train_outputs(idx_pair, tmp_path):
    out = tmp_path / "run"
    assert main(train_args(idx_pair, out, "--policy", "mcts", "--max-iterations", "3",
                           "--sim-epochs", "1")) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    for key in ("config", "seed", "fingerprints", "actions", "artifacts", "model_sha256"):
        assert key in manifest
    assert manifest["model_sha256"] == model_hash(load_model((out / "model.bin").read_bytes()))
    assert len(manifest["actions"]) == 2
    dots = sorted(p.name for p in (out / "dot").iterdir())
    assert dots == ["gen_000_initial.dot", "gen_001.dot", "gen_002.dot", "gen_003.dot"]
    assert (out / "history.png").stat().st_size > 0
    assert (out / "search.csv").read_text().startswith("generation,iteration")
    assert len((out / "history.csv").read_text().splitlines()) == 7


def test_manifest_replay(idx_pair, tmp_path):
    out = tmp_path / "first"
    main(train_args(idx_pair, out, "--max-iterations", "3", "--sim-epochs", "1", "--seed", "4"))
    assert main(["train", "--manifest", str(out / "manifest.json"), "--out", str(tmp_path / "again")]) == 0
    a = json.loads((out / "manifest.json").read_text())
    b = json.loads((tmp_path / "again" / "manifest.json").read_text())
    assert a["model_sha256"] == b["model_sha256"]
    assert a["fingerprints"] == b["fingerprints"]


def test_config_file_and_override(idx_pair, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# settings\npolicy = random\nepochs = 1\ngenerations = 2\nseed = 3\n")
    assert read_config(cfg)["policy"] == "random"
    ip, lp = idx_pair
    out = tmp_path / "o"
    assert main(["train", "--config", str(cfg), "--images", str(ip), "--labels", str(lp),
                 "--out", str(out), "--epochs", "2"]) == 0
    config = json.loads((out / "manifest.json").read_text())["config"]
    assert config["policy"] == "random" and config["epochs"] == "2" and config["seed"] == "3"


def test_bad_config_key(idx_pair, tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("colour = blue\n")
    assert main(train_args(idx_pair, tmp_path / "o", "--config", str(cfg))) == 1
    assert "colour" in capsys.readouterr().err


def test_missing_data_path(tmp_path, capsys):
    missing = tmp_path / "absent-images"
    assert main(["train", "--images", str(missing), "--labels", str(missing), "--out", str(tmp_path)]) == 1
    assert str(missing) in capsys.readouterr().err


def test_unknown_flag():
    with pytest.raises(SystemExit) as exc:
        main(["train", "--no-such-flag"])
    assert exc.value.code == 2


def test_eval_and_export_dot(idx_pair, tmp_path, capsys):
    out = tmp_path / "run"
    main(train_args(idx_pair, out, "--policy", "random"))
    capsys.readouterr()
    ip, lp = idx_pair
    assert main(["eval", "--model", str(out / "model.bin"), "--images", str(ip), "--labels", str(lp)]) == 0
    assert capsys.readouterr().out.startswith("accuracy ")
    assert main(["export-dot", "--model", str(out / "model.bin"), "--out", str(tmp_path / "m.dot")]) == 0
    (graph,) = pydot.graph_from_dot_data((tmp_path / "m.dot").read_text())
    assert len(graph.get_edges()) == len(load_model((out / "model.bin").read_bytes()).edges())


def test_transform_ts(tmp_path):
    ds = MtsDataset(np.random.default_rng(0).normal(size=(6, 2, 20)), np.arange(6) % 2, 2)
    write_timeseries_csv(ds, tmp_path / "ts.csv")
    out = tmp_path / "rp"
    assert main(["transform-ts", "--input", str(tmp_path / "ts.csv"), "--out", str(out),
                 "--max-side", "10", "--figure"]) == 0
    for d in range(2):
        images = load_idx(out / f"dim{d}-images-idx3-ubyte", out / f"dim{d}-labels-idx1-ubyte")
        assert images.input_shapes == [(1, 10, 10)]
        assert set(np.unique(images.inputs[0])) <= {0.0, 1.0}
    assert (out / "sample0.png").exists()


def test_train_on_time_series(tmp_path):
    rng = np.random.default_rng(0)
    labels = np.arange(40) % 2
    t = np.linspace(0, 6, 12)
    series = np.stack([np.sin(t * (1 + labels[:, None])), rng.normal(size=(40, 12))], axis=1)
    write_timeseries_csv(MtsDataset(series, labels, 2), tmp_path / "ts.csv")
    out = tmp_path / "run"
    assert main(["train", "--ts-csv", str(tmp_path / "ts.csv"), "--out", str(out), "--generations", "2",
                 "--epochs", "1", "--policy", "random", "--def-neu", "4"]) == 0
    g = load_model((out / "model.bin").read_bytes())
    assert len(g.inputs) == 2
