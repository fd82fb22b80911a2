import json

import numpy as np
import pytest

from hybrid_snn.checkpoint import load_checkpoint
from hybrid_snn.cli import main, run
from test_io import write_mnist


@pytest.fixture(scope="module")
def mnist_dir(tmp_path_factory):
    """A tiny MNIST-shaped dataset: bright top half for class 0, bottom half for class 1."""
    root = tmp_path_factory.mktemp("mnist")
    rng = np.random.default_rng(0)
    for prefix, n in (("train", 64), ("t10k", 32)):
        y = rng.integers(2, size=n)
        x = rng.integers(0, 60, size=(n, 28, 28))
        for i, label in enumerate(y):
            rows = slice(0, 14) if label == 0 else slice(14, 28)
            x[i, rows] += 180
        write_mnist(root, x.astype(np.uint8), y.astype(np.uint8), prefix=prefix)
    return root


@pytest.fixture(scope="module")
def pipeline(mnist_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    common = ["--data-dir", str(mnist_dir), "--out", str(out), "--seed", "1"]
    ann = run(["train-ann", *common, "--epochs", "2", "--lr", "1e-3", "--batch-size", "16"])
    conv = run(["convert", *common, "--timesteps", "16", "--calibration-samples", "16"])
    stdb = run(["train-stdb", *common, "--timesteps", "16", "--epochs", "1", "--batch-size", "16",
                "--truncate", "8"])
    return out, common, ann, conv, stdb


class TestPipeline:
    def test_outputs(self, pipeline):
        out, _, ann, conv, stdb = pipeline
        for name in ("ann.snnf", "converted_T16.snnf", "stdb_T16_stdb.snnf", "ann_metrics.csv",
                     "stdb_T16_stdb_metrics.csv"):
            assert (out / name).exists()
        assert load_checkpoint(out / "converted_T16.snnf").phase == "converted"
        ckpt = load_checkpoint(out / "stdb_T16_stdb.snnf")
        assert ckpt.metadata["truncate"] == 8 and ckpt.metadata["epochs"] == 1
        assert ckpt.params.thresholds == conv["thresholds"]

    def test_infer_deterministic(self, pipeline, capsys):
        out, common, *_ = pipeline
        args = ["infer", *common, "--checkpoint", str(out / "stdb_T16_stdb.snnf")]
        a, b = run(args), run(args)
        assert a == b and 0 <= a["accuracy"] <= 1 and a["leak"] == 0.99
        line = capsys.readouterr().out.strip().splitlines()[-1]
        assert json.loads(line)["accuracy"] == a["accuracy"]

    def test_infer_ann(self, pipeline):
        out, common, ann, *_ = pipeline
        assert run(["infer", *common, "--checkpoint", str(out / "ann.snnf")])["accuracy"] == ann["accuracy"]

    def test_convert_reproducible(self, pipeline):
        out, common, _, conv, _ = pipeline
        again = run(["convert", *common, "--timesteps", "16", "--calibration-samples", "16"])
        assert again["thresholds"] == conv["thresholds"]

    def test_analyze(self, pipeline, tmp_path):
        out, common, *_ = pipeline
        csv_path = tmp_path / "spikes.csv"
        res = run(["analyze-spikes", *common, "--checkpoint", str(out / "converted_T16.snnf"),
                   "--compare", str(out / "stdb_T16_stdb.snnf"), "--csv", str(csv_path)])
        assert csv_path.read_text().startswith("model,layer,population")
        assert res["comparison"].aggregate > 0

    def test_wrong_phase(self, pipeline):
        out, common, *_ = pipeline
        assert main(["train-stdb", *common, "--checkpoint", str(out / "ann.snnf")]) == 1
        assert main(["convert", *common, "--checkpoint", str(out / "converted_T16.snnf")]) == 1


class TestErrors:
    def test_unknown_command(self):
        assert main(["frobnicate"]) == 2

    def test_missing_checkpoint(self, tmp_path, capsys):
        assert main(["infer", "--checkpoint", str(tmp_path / "none.snnf")]) == 1
        assert "does not exist" in capsys.readouterr().err

    def test_missing_data(self, tmp_path):
        assert main(["train-ann", "--data-dir", str(tmp_path), "--out", str(tmp_path)]) == 1

    def test_bad_config(self, tmp_path):
        path = tmp_path / "c.ini"
        path.write_text("[run]\nnope = 1\n")
        assert main(["train-ann", "--config", str(path)]) == 1


def test_gradcheck(capsys):
    assert main(["gradcheck", "--nets", "3"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines and all(line.startswith("PASS") for line in lines)
