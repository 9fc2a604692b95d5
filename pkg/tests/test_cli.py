import json

import numpy as np
import pytest
from PIL import Image as PILImage

from percollfft.cli import main
from percollfft.images import Image, read_image, write_image


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def error_of(err):
    lines = err.strip().splitlines()
    assert len(lines) == 1
    return json.loads(lines[0])


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """A 12-image dataset and one short CV run shared by the tests below."""
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--count", "12", "--seed", "7", "--out", str(root / "ds")]) == 0
    assert main(["train", "--manifest", str(root / "ds" / "manifest.csv"), "--epochs", "2",
                 "--repeats", "1", "--lr", "0.003", "--fusion", "late",
                 "--out", str(root / "run")]) == 0
    return root


class TestSynth:
    def test_rerun_is_byte_identical(self, tmp_path, capsys):
        for name in ("a", "b"):
            code, out, _ = run(capsys, "synth", "--count", 8, "--seed", 3, "--out", tmp_path / name)
            assert code == 0 and json.loads(out)["images"] == 8
        files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*")
                       if p.is_file() and p.name != "config.json")
        assert len(files) == 10
        for rel in files:
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()

    def test_config_echo(self, tmp_path, capsys):
        run(capsys, "synth", "--count", 4, "--seed", 11, "--out", tmp_path)
        echo = json.loads((tmp_path / "config.json").read_text())
        assert echo["seed"] == 11 and echo["synth"]["count"] == 4


class TestTrain:
    def test_artifacts(self, trained):
        run_dir = trained / "run"
        assert sorted(p.name for p in (run_dir / "checkpoints").iterdir()) == [
            "repeat0_fold0.pcfm", "repeat0_fold1.pcfm", "repeat0_fold2.pcfm"]
        summary = json.loads((run_dir / "summary.json").read_text())
        assert summary["runs"] == 1 and "accuracy" in summary["formatted"]
        fold = json.loads((run_dir / "metrics" / "repeat0_fold0.json").read_text())
        assert set(fold) == {"accuracy", "weighted_f1", "auroc", "auprc", "confusion", "n"}
        assert json.loads((run_dir / "config.json").read_text())["model"]["fusion"] == "late"

    def test_evaluate_reproduces_fold_metrics(self, trained, tmp_path, capsys):
        for f in range(3):
            code, _, _ = run(capsys, "evaluate", "--held-out",
                             "--checkpoint", trained / "run" / "checkpoints" / f"repeat0_fold{f}.pcfm",
                             "--manifest", trained / "ds" / "manifest.csv", "--out", tmp_path / str(f))
            assert code == 0
            got = json.loads((tmp_path / str(f) / "metrics.json").read_text())
            want = json.loads((trained / "run" / "metrics" / f"repeat0_fold{f}.json").read_text())
            assert got["confusion"] == want["confusion"]
            assert abs(got["accuracy"] - want["accuracy"]) <= 1e-6
            assert abs(got["auroc"]["macro"] - want["auroc"]["macro"]) <= 1e-6


class TestPredict:
    def test_json_lines(self, trained, tmp_path, capsys):
        imgs = [trained / "ds" / "images" / f"synth_000{i}.ppm" for i in range(3)]
        code, _, _ = run(capsys, "predict", "--checkpoint",
                         trained / "run" / "checkpoints" / "repeat0_fold0.pcfm",
                         *imgs, "--out", tmp_path)
        assert code == 0
        rows = [json.loads(l) for l in (tmp_path / "predictions.jsonl").read_text().splitlines()]
        assert [r["id"] for r in rows] == ["synth_0000", "synth_0001", "synth_0002"]
        for r in rows:
            assert abs(sum(r["scores"].values()) - 1.0) < 1e-6
            assert r["class"] == max(r["scores"], key=r["scores"].get)

    def test_wrong_size_writes_nothing(self, trained, tmp_path, capsys):
        write_image(tmp_path / "small.ppm", Image(np.zeros((400, 100, 3))))
        out = tmp_path / "pred"
        code, stdout, err = run(capsys, "predict", "--checkpoint",
                                trained / "run" / "checkpoints" / "repeat0_fold0.pcfm",
                                trained / "ds" / "images" / "synth_0000.ppm",
                                tmp_path / "small.ppm", "--out", out)
        assert code == 3 and stdout == ""
        assert error_of(err)["error"] == "DimensionError"
        assert not out.exists()


class TestGradcam:
    def test_heatmaps(self, trained, tmp_path, capsys):
        code, _, _ = run(capsys, "gradcam", "--checkpoint",
                         trained / "run" / "checkpoints" / "repeat0_fold0.pcfm",
                         trained / "ds" / "images" / "synth_0001.ppm", "--target", "sickle",
                         "--out", tmp_path)
        assert code == 0
        with PILImage.open(tmp_path / "gradcam" / "synth_0001.png") as im:
            assert (im.mode, im.size) == ("L", (24, 96))
        row = json.loads((tmp_path / "gradcam.jsonl").read_text())
        assert row["target"] == "sickle"

    def test_overlay_is_rgb(self, trained, tmp_path, capsys):
        code, _, _ = run(capsys, "gradcam", "--checkpoint",
                         trained / "run" / "checkpoints" / "repeat0_fold0.pcfm",
                         trained / "ds" / "images" / "synth_0002.ppm", "--overlay",
                         "--out", tmp_path)
        assert code == 0
        assert read_image(tmp_path / "gradcam" / "synth_0002.png").pixels.shape == (96, 24, 3)

    def test_unknown_target(self, trained, tmp_path, capsys):
        code, _, err = run(capsys, "gradcam", "--checkpoint",
                           trained / "run" / "checkpoints" / "repeat0_fold0.pcfm",
                           trained / "ds" / "images" / "synth_0001.ppm", "--target", "anemia",
                           "--out", tmp_path)
        assert code == 2 and "target" in error_of(err)["message"]


class TestExtractFeatures:
    def test_feature_json(self, trained, tmp_path, capsys):
        code, _, _ = run(capsys, "extract-features", "--manifest", trained / "ds" / "manifest.csv",
                         "--out", tmp_path)
        assert code == 0
        doc = json.loads((tmp_path / "features" / "synth_0004.json").read_text())
        assert (doc["n"], doc["height"]) == (5, 500)
        assert len(doc["channels"]) == 3 and all(len(c) == 100 for c in doc["channels"])


class TestErrors:
    def test_exit_codes(self, trained, tmp_path, capsys):
        manifest = trained / "ds" / "manifest.csv"
        (tmp_path / "bad.json").write_text('{"model": {"fusion": "early", "fft_dim": 0}}')
        code, _, err = run(capsys, "train", "--config", tmp_path / "bad.json", "--manifest", manifest)
        assert code == 2 and "fft_dim" in error_of(err)["message"]

        code, _, err = run(capsys, "synth", "--bogus")
        assert code == 2 and error_of(err)["exit"] == 2

        (tmp_path / "m.csv").write_text("id,path,class,subtype\na,missing.ppm,healthy,\n")
        code, _, err = run(capsys, "train", "--manifest", tmp_path / "m.csv", "--out", tmp_path)
        assert code == 3 and "missing file" in error_of(err)["message"]

        code, _, err = run(capsys, "train", "--manifest", manifest, "--epochs", 1, "--lr", 1e30,
                           "--repeats", 1, "--out", tmp_path / "div")
        assert code == 4 and error_of(err)["error"] == "NumericError"
        assert "epoch 0" in error_of(err)["message"]

    def test_missing_checkpoint_flag(self, trained, capsys):
        code, _, err = run(capsys, "predict", trained / "ds" / "images" / "synth_0000.ppm")
        assert code == 2 and "checkpoint" in error_of(err)["message"]
