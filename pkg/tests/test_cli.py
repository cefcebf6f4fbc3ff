import json

import numpy as np
import pytest

from pdloss.backbone import MlpConfig, MlpParams, embed_array, load_backbone, save_backbone
from pdloss.autodiff import Tensor
from pdloss.cli import main
from pdloss.dataio import load_dataset, write_features_csv, write_labels_csv
from pdloss.stats_eval import analyze, recall_at_k


def gen(tmp_path, *extra, name="data"):
    assert main(["--quiet", "gen-data", "--out", str(tmp_path / name), *extra]) == 0
    return tmp_path / name


def experiment(tmp_path, data, **train):
    doc = {
        "data": {"features": str(data / "features.pdl1"), "labels": str(data / "labels.csv")},
        "model": {"hidden_dims": [16], "embedding_dim": 8},
        "train": {"epochs": 3, "batch_size": 16, "base_lr": 0.01, **train},
        "output_dir": "run",
    }
    path = tmp_path / "exp.json"
    path.write_text(json.dumps(doc))
    return path


class TestGenData:
    def test_defaults_round_trip(self, tmp_path):
        ds = load_dataset(gen(tmp_path) / "features.pdl1", tmp_path / "data" / "labels.csv")
        assert ds.features.shape == (500, 32) and ds.class_count == 10

    def test_single_class_is_config_error(self, tmp_path, capsys):
        assert main(["gen-data", "--classes", "1", "--out", str(tmp_path)]) == 2
        assert "configuration error" in capsys.readouterr().err

    def test_byte_identical(self, tmp_path):
        a = gen(tmp_path, "--seed", "4", name="a")
        b = gen(tmp_path, "--seed", "4", name="b")
        for f in ("features.pdl1", "labels.csv", "metadata.json"):
            assert (a / f).read_bytes() == (b / f).read_bytes()

    def test_global_flags_before_subcommand(self, tmp_path):
        assert main(["--seed", "4", "--quiet", "gen-data", "--classes", "3", "--per-class", "4",
                     "--out", str(tmp_path / "x")]) == 0
        assert json.loads((tmp_path / "x" / "metadata.json").read_text())["seed"] == 4


class TestTrain:
    def test_writes_outputs_and_is_deterministic(self, tmp_path):
        data = gen(tmp_path, "--classes", "4", "--per-class", "20", "--dim", "8")
        exp = experiment(tmp_path, data)
        assert main(["--quiet", "train", str(exp)]) == 0
        first = (tmp_path / "run" / "metrics.jsonl").read_bytes()
        assert (tmp_path / "run" / "final.ckpt").exists()
        assert main(["--quiet", "train", str(exp)]) == 0
        assert (tmp_path / "run" / "metrics.jsonl").read_bytes() == first

    def test_unknown_key_rejected(self, tmp_path):
        data = gen(tmp_path, "--classes", "3", "--per-class", "5", "--dim", "4")
        exp = experiment(tmp_path, data, learning_rate=0.1)
        assert main(["--quiet", "train", str(exp)]) == 2

    def test_unknown_top_level_key(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text(json.dumps({"data": {}, "optimizer": "sgd"}))
        assert main(["train", str(p)]) == 2

    def test_dloss_uniform_aborts(self, tmp_path, capsys):
        data = gen(tmp_path, "--classes", "10", "--per-class", "10", "--dim", "4")
        exp = experiment(tmp_path, data, loss="dloss", batch_size=2, epochs=10)
        assert main(["--quiet", "train", str(exp)]) == 1
        assert "genuine" in capsys.readouterr().err

    def test_tiny_validation_split_named(self, tmp_path, capsys):
        # one validation sample per class leaves no genuine pair for d'
        data = gen(tmp_path, "--classes", "3", "--per-class", "10", "--dim", "4")
        exp = experiment(tmp_path, data, epochs=1, batch_size=8)
        assert main(["--quiet", "train", str(exp)]) == 1
        assert "validation set" in capsys.readouterr().err

    def test_out_dir_override(self, tmp_path):
        data = gen(tmp_path, "--classes", "3", "--per-class", "20", "--dim", "4")
        exp = experiment(tmp_path, data, epochs=1, batch_size=8)
        assert main(["--quiet", "--out-dir", str(tmp_path / "elsewhere"), "train", str(exp)]) == 0
        assert (tmp_path / "elsewhere" / "metrics.jsonl").exists()


def _toy_checkpoint(tmp_path):
    # two tight clusters, identity backbone
    X = np.array([[1.0, 0.0], [0.9, 0.1], [0.95, 0.02], [0.0, 1.0], [0.1, 0.9], [0.05, 0.97]])
    write_features_csv(tmp_path / "f.csv", X)
    write_labels_csv(tmp_path / "y.csv", [0, 0, 0, 1, 1, 1])
    cfg = MlpConfig(input_dim=2, hidden_dims=(), embedding_dim=2)
    save_backbone(tmp_path / "toy.ckpt", cfg, MlpParams([Tensor(np.eye(2))], [Tensor(np.zeros(2))]))
    return X


class TestEval:
    def args(self, tmp_path, *extra):
        return ["--quiet", "eval", str(tmp_path / "toy.ckpt"), "--features", str(tmp_path / "f.csv"),
                "--labels", str(tmp_path / "y.csv"), "--out", str(tmp_path / "r.json"), *extra]

    def test_perfect_clusters(self, tmp_path):
        _toy_checkpoint(tmp_path)
        assert main(self.args(tmp_path, "--k", "1,2,4")) == 0
        assert json.loads((tmp_path / "r.json").read_text())["recall"]["1"] == 1.0

    def test_single_k(self, tmp_path):
        _toy_checkpoint(tmp_path)
        main(self.args(tmp_path, "--k", "1"))
        assert list(json.loads((tmp_path / "r.json").read_text())["recall"]) == ["1"]

    def test_matches_library(self, tmp_path, rng):
        X = _toy_checkpoint(tmp_path)
        main(self.args(tmp_path, "--k", "1,2"))
        cfg, params, _ = load_backbone(tmp_path / "toy.ckpt")
        want = recall_at_k(embed_array(params, X), [0, 0, 0, 1, 1, 1], [1, 2]).to_dict()
        assert json.loads((tmp_path / "r.json").read_text()) == want

    def test_dim_mismatch(self, tmp_path, capsys):
        _toy_checkpoint(tmp_path)
        write_features_csv(tmp_path / "f.csv", np.ones((6, 3)))
        assert main(self.args(tmp_path, "--k", "1")) == 1
        assert "checkpoint expects" in capsys.readouterr().err


class TestAnalyze:
    def test_trained_beats_untrained(self, tmp_path):
        data = gen(tmp_path, "--classes", "4", "--per-class", "20", "--dim", "8", "--sigma", "0.3")
        exp = experiment(tmp_path, data, epochs=20)
        assert main(["--quiet", "train", str(exp)]) == 0
        d = {}
        for ck in ("initial", "final"):
            out = tmp_path / f"{ck}.json"
            assert main(["--quiet", "analyze", str(tmp_path / "run" / f"{ck}.ckpt"), "--features",
                         str(data / "features.pdl1"), "--labels", str(data / "labels.csv"), "--out", str(out)]) == 0
            d[ck] = json.loads(out.read_text())
        assert d["final"]["d_prime"] > d["initial"]["d_prime"]
        doc = d["final"]
        assert sum(doc["genuine"]["histogram"]["counts"]) + sum(doc["impostor"]["histogram"]["counts"]) == 80 * 79 // 2
        edges = doc["genuine"]["histogram"]["edges"]
        assert len(edges) == 51 and edges[0] == 0.0 and edges[-1] == 2.0

    def test_matches_library(self, tmp_path):
        X = _toy_checkpoint(tmp_path)
        out = tmp_path / "a.json"
        main(["--quiet", "analyze", str(tmp_path / "toy.ckpt"), "--features", str(tmp_path / "f.csv"),
              "--labels", str(tmp_path / "y.csv"), "--bins", "10", "--range", "0", "1", "--k", "1,2",
              "--out", str(out)])
        want = json.loads(json.dumps(analyze(X, [0, 0, 0, 1, 1, 1], 10, (0, 1), [1, 2])))
        assert json.loads(out.read_text()) == want


class TestGradcheck:
    def test_default_passes(self, tmp_path, capsys):
        assert main(["gradcheck", "--seeds", "2", "--out-dir", str(tmp_path)]) == 0
        checks = json.loads((tmp_path / "gradcheck.json").read_text())["checks"]
        assert {"pd_loss/Z", "dloss/Z", "proxynca/Z", "triplet/Z"} <= set(checks)

    def test_zero_tolerance_fails(self, capsys):
        assert main(["gradcheck", "--seeds", "1", "--tolerance", "0"]) == 1
        assert "gradcheck failed" in capsys.readouterr().err

    def test_deterministic_table(self, capsys):
        main(["gradcheck", "--seeds", "1", "--seed", "3"])
        a = capsys.readouterr().out
        main(["gradcheck", "--seeds", "1", "--seed", "3"])
        assert capsys.readouterr().out == a


def test_missing_subcommand():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2
