import json
from pathlib import Path

import numpy as np
import pytest

from tinyship import data as dp
from tinyship.cli import main


def run(argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="session")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert run(["synth", "--out", out, "--count", 4, "--size", 64,
                "--seed", 7]) == 0
    return out


@pytest.fixture(scope="session")
def trained_dir(tmp_path_factory, synth_dir):
    out = tmp_path_factory.mktemp("train")
    assert run(["train", "--manifest", synth_dir / "manifest.json",
                "--out", out, "--steps", 3, "--batch", 2, "--seed", 0]) == 0
    return out


@pytest.fixture(scope="session")
def pred_dir(tmp_path_factory, synth_dir, trained_dir):
    out = tmp_path_factory.mktemp("pred")
    assert run(["predict", "--checkpoint", trained_dir / "checkpoint.mtuw",
                "--manifest", synth_dir / "manifest.json", "--out", out]) == 0
    return out


@pytest.fixture(scope="session")
def gt_dir(tmp_path_factory, synth_dir):
    """Ground-truth masks, and a parallel dir of the masks as prob maps."""
    gt = tmp_path_factory.mktemp("gt")
    perfect = tmp_path_factory.mktemp("perfect")
    for e in dp.read_manifest(synth_dir / "manifest.json"):
        sc = dp.load_scene(e, synth_dir)
        dp.save_mask(gt / f"{sc.id}.png", sc.mask)
        dp.save_prob_map(perfect / f"{sc.id}.png", sc.mask.astype(float))
    return gt, perfect


class TestSynth:
    def test_outputs(self, synth_dir):
        entries = dp.read_manifest(synth_dir / "manifest.json")
        assert len(entries) == 4
        sc = dp.load_scene(entries[0], synth_dir)
        assert sc.image.shape == (64, 64)
        assert (synth_dir / "run_config.json").exists()

    def test_deterministic_across_runs(self, tmp_path, synth_dir):
        out = tmp_path / "again"
        assert run(["synth", "--out", out, "--count", 4, "--size", 64,
                    "--seed", 7]) == 0
        for e in dp.read_manifest(out / "manifest.json"):
            a = dp.load_scene(e, out)
            b = dp.load_scene(e, synth_dir)
            assert np.array_equal(a.image, b.image)
            assert np.array_equal(a.mask, b.mask)

    def test_parallel_jobs_match_serial(self, tmp_path, synth_dir):
        out = tmp_path / "par"
        assert run(["synth", "--out", out, "--count", 4, "--size", 64,
                    "--seed", 7, "--jobs", 2]) == 0
        for e in dp.read_manifest(out / "manifest.json"):
            a = dp.load_scene(e, out)
            b = dp.load_scene(e, synth_dir)
            assert np.array_equal(a.image, b.image)


class TestAugmentTile:
    def test_augment_writes_paste_logs(self, tmp_path, synth_dir):
        out = tmp_path / "aug"
        assert run(["augment", "--manifest", synth_dir / "manifest.json",
                    "--out", out, "--seed", 1]) == 0
        entries = dp.read_manifest(out / "manifest.json")
        assert len(entries) == 4
        logs = sorted(out.glob("*.paste.json"))
        assert len(logs) == 4
        log = json.loads(logs[0].read_text())
        assert all(e["status"] in ("ok", "failed") for e in log)

    def test_tile_and_metadata(self, tmp_path):
        img = (np.random.default_rng(0).random((100, 100)) * 255).astype(np.uint8)
        src = tmp_path / "big.png"
        dp.save_image(src, img)
        out = tmp_path / "tiles"
        assert run(["tile", "--image", src, "--out", out,
                    "--tile-size", 64]) == 0
        meta = json.loads((out / "tileset.json").read_text())
        assert meta["pad_bottom"] == 28 and meta["pad_right"] == 28
        assert len(meta["tiles"]) == 4
        t = dp.load_image(out / meta["tiles"][0]["path"])
        assert np.array_equal(t, img[:64, :64])


class TestTrainPredict:
    def test_train_artifacts(self, trained_dir):
        assert (trained_dir / "checkpoint.mtuw").exists()
        csv = (trained_dir / "train_log.csv").read_text().strip().split("\n")
        assert csv[0] == "step,lr,loss,train_iou"
        assert len(csv) == 4
        summary = json.loads((trained_dir / "train_summary.json").read_text())
        assert summary["steps"] == 3
        assert 0.0 <= summary["train_iou"] <= 1.0

    def test_predict_outputs_probability_maps(self, pred_dir):
        maps = sorted(pred_dir.glob("*.png"))
        assert len(maps) == 4
        prob = dp.load_prob_map(maps[0])
        assert prob.shape == (64, 64)
        assert prob.min() >= 0.0 and prob.max() <= 1.0


class TestClusterEvalRoc:
    def test_cluster_regions_json(self, tmp_path, gt_dir):
        _, perfect = gt_dir
        out = tmp_path / "regions"
        assert run(["cluster", "--pred-dir", perfect, "--out", out,
                    "--tau", 0.5]) == 0
        files = sorted(out.glob("*.regions.json"))
        assert len(files) == 4
        doc = json.loads(files[0].read_text())
        assert doc["tau"] == 0.5
        for reg in doc["regions"]:
            assert set(reg) >= {"centroid", "area", "bbox"}

    def test_eval_perfect_prediction(self, tmp_path, gt_dir):
        gt, perfect = gt_dir
        out = tmp_path / "eval"
        assert run(["eval", "--gt-dir", gt, "--pred-dir", perfect,
                    "--out", out]) == 0
        rep = json.loads((out / "report.json").read_text())
        assert rep["pd"] == 1.0 and rep["fa"] == 0.0 and rep["iou"] == 1.0
        assert len(rep["per_image"]) == 4

    def test_eval_model_prediction_runs(self, tmp_path, gt_dir, pred_dir):
        gt, _ = gt_dir
        out = tmp_path / "eval2"
        assert run(["eval", "--gt-dir", gt, "--pred-dir", pred_dir,
                    "--out", out, "--adaptive-tau"]) == 0
        rep = json.loads((out / "report.json").read_text())
        assert 0.0 <= rep["pd"] <= 1.0 and 0.0 <= rep["iou"] <= 1.0

    def test_roc_outputs(self, tmp_path, gt_dir):
        gt, perfect = gt_dir
        out = tmp_path / "roc"
        assert run(["roc", "--gt-dir", gt, "--pred-dir", perfect,
                    "--out", out, "--tau-points", 11]) == 0
        lines = (out / "roc.csv").read_text().strip().split("\n")
        assert lines[0] == "tau,pd,fa"
        assert len(lines) == 12
        rows = [tuple(map(float, ln.split(","))) for ln in lines[1:]]
        assert all(b[1] <= a[1] + 1e-12 for a, b in zip(rows, rows[1:]))
        assert all(b[2] <= a[2] + 1e-12 for a, b in zip(rows, rows[1:]))
        for proj in ("fa_pd", "tau_pd", "tau_fa"):
            assert (out / f"roc_{proj}.csv").exists()


class TestConfigAndErrors:
    def test_config_file_sets_defaults(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"count": 2, "size": 64, "seed": 3}))
        out = tmp_path / "out"
        assert run(["synth", "--config", cfg, "--out", out]) == 0
        assert len(dp.read_manifest(out / "manifest.json")) == 2

    def test_explicit_flag_beats_config(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"count": 2}))
        out = tmp_path / "out"
        assert run(["synth", "--config", cfg, "--out", out, "--count", 3]) == 0
        assert len(dp.read_manifest(out / "manifest.json")) == 3

    def test_unknown_config_key_exit_2(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"bogus": 1}))
        assert run(["synth", "--config", cfg, "--out", tmp_path / "x"]) == 2
        err = json.loads(capsys.readouterr().err)
        assert err["error"]["type"] == "config"

    def test_missing_manifest_exit_3(self, tmp_path, capsys):
        assert run(["train", "--manifest", tmp_path / "nope.json",
                    "--out", tmp_path / "t"]) == 3
        err = json.loads(capsys.readouterr().err)
        assert err["error"]["type"] == "data"

    def test_bad_checkpoint_exit_2(self, tmp_path, synth_dir, capsys):
        bad = tmp_path / "bad.mtuw"
        bad.write_bytes(b"not a checkpoint")
        assert run(["predict", "--checkpoint", bad,
                    "--manifest", synth_dir / "manifest.json",
                    "--out", tmp_path / "p"]) == 2
