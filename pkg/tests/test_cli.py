import json
import os
import subprocess
import sys

import numpy as np
import pytest

from partseg.cli import main
from partseg.network import SegmentorWeights


@pytest.fixture(scope="module")
def tiny_weights(tmp_path_factory):
    path = tmp_path_factory.mktemp("w") / "weights.bin"
    SegmentorWeights.create(d=8, seed=2, dtype=np.float32).save(str(path))
    return str(path)


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(["make-synthetic", "--n", "5", "--seed", "3", "--out", str(out)]) == 0
    return str(out)


class TestSubcommands:
    def test_make_synthetic_files(self, dataset_dir):
        names = os.listdir(dataset_dir)
        assert "recipe.json" in names
        assert sum(n.endswith(".ply") for n in names) == 5
        assert sum(n.endswith(".fine.json") for n in names) == 5
        assert sum(n.endswith(".coarse.json") for n in names) == 5

    def test_curate(self, cube_obj, tmp_path):
        rc = main(["curate", cube_obj, "--out", str(tmp_path)])
        assert rc == 0
        report = json.loads((tmp_path / "cube.report.json").read_text())
        assert report["reason"] == "too_few_parts"     # one connected cube
        labels = json.loads((tmp_path / "cube.labels.json").read_text())
        assert labels["n_parts"] == 1

    def test_segment_writes_default_labels(self, tmp_path, cube_obj, tiny_weights):
        rc = main(["segment", cube_obj, "--weights", tiny_weights,
                   "--npp", "8", "--n-points", "300"])
        assert rc == 0
        out = json.loads((tmp_path / "cube.labels.json").read_text())
        assert out["n_parts"] >= 1
        assert len(out["face_labels"]) == 12

    def test_segment_with_prompts_and_ply(self, tmp_path, cube_obj, tiny_weights):
        prompts = tmp_path / "p.json"
        prompts.write_text(json.dumps([[0, 0, 0.5], [0, 0, -0.5]]))
        out_labels = tmp_path / "out.labels.json"
        out_ply = tmp_path / "pts.ply"
        rc = main(["segment", cube_obj, "--weights", tiny_weights,
                   "--prompts", str(prompts), "--n-points", "300",
                   "--out", str(out_labels), "--ply-out", str(out_ply)])
        assert rc == 0
        assert json.loads(out_labels.read_text())["n_parts"] == 2
        assert out_ply.stat().st_size > 0

    def test_missing_file_is_domain_error(self, tmp_path, tiny_weights):
        rc = main(["segment", str(tmp_path / "nope.obj"), "--weights", tiny_weights])
        assert rc == 1

    def test_unknown_flag_exits_2(self, cube_obj):
        with pytest.raises(SystemExit) as err:
            main(["segment", cube_obj, "--does-not-exist"])
        assert err.value.code == 2

    def test_unknown_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as err:
            main(["frobnicate"])
        assert err.value.code == 2

    def test_train_then_eval(self, tmp_path, dataset_dir):
        weights = tmp_path / "w.bin"
        rc = main(["train", "--data", dataset_dir, "--steps", "2", "--seed", "0",
                   "--split", "all", "--out", str(weights)])
        assert rc == 0
        assert weights.exists()
        assert (tmp_path / "loss_trace.csv").exists()
        assert (tmp_path / "loss_curve.png").exists()
        out_dir = tmp_path / "eval"
        rc = main(["eval", "--weights", str(weights), "--data", dataset_dir,
                   "--mode", "full", "--split", "all", "--seed", "0",
                   "--n-points", "400", "--npp", "8", "--out", str(out_dir)])
        assert rc == 0
        report = json.loads((out_dir / "report_full.json").read_text())
        assert 0.0 <= report["mean_miou"] <= 1.0
        assert (out_dir / "report_full_iou.png").exists()

    def test_eval_interactive_mode(self, tmp_path, dataset_dir, tiny_weights):
        out_dir = tmp_path / "ieval"
        rc = main(["eval", "--weights", tiny_weights, "--data", dataset_dir,
                   "--mode", "interactive", "--split", "all", "--seed", "0",
                   "--n-points", "300", "--out", str(out_dir)])
        assert rc == 0
        report = json.loads((out_dir / "report_interactive.json").read_text())
        assert report["mode"] == "interactive"
        assert report["prompt_mean_iou"] is not None


class TestServe:
    def test_port_zero_prints_ephemeral_port(self, tiny_weights):
        proc = subprocess.Popen(
            [sys.executable, "-m", "partseg.cli", "serve", "--weights", tiny_weights,
             "--port", "0", "--n-points", "200"],
            stdout=subprocess.PIPE, stderr=subprocess.STDOUT, text=True)
        try:
            line = proc.stdout.readline()
            assert "serving on http://" in line
            port = int(line.split(":")[-1].split("/")[0])
            assert port > 0
        finally:
            proc.terminate()
            proc.wait(timeout=10)

    def test_serve_requires_weights(self, monkeypatch):
        monkeypatch.delenv("SEG_WEIGHTS", raising=False)
        assert main(["serve", "--port", "0"]) == 1
