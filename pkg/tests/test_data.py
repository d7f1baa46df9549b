import json

import numpy as np
import pytest

from tinyship.data import (CrrpConfig, DataError, NoiseSpec, Scene, TargetSpec,
                           classic_augment, crrp, load_image, load_mask,
                           load_prob_map, load_scene, normalize, read_manifest,
                           save_image, save_mask, save_prob_map,
                           save_scene_files, stitch, synth_scenes, tile,
                           write_manifest)
from tinyship.postprocess import cluster8


class TestTiling:
    def test_exact_grid(self):
        raster = (np.arange(2048 * 2048) % 65536).astype(np.uint16).reshape(2048, 2048)
        ts = tile(raster, 1024)
        origins = [(r, c) for r, c, _ in ts.tiles]
        assert origins == [(0, 0), (0, 1024), (1024, 0), (1024, 1024)]
        assert ts.pad_bottom == 0 and ts.pad_right == 0

    def test_padding_recorded(self):
        raster = np.ones((1500, 1500), dtype=np.uint8)
        ts = tile(raster, 1024)
        assert len(ts.tiles) == 4
        assert ts.pad_bottom == 548 and ts.pad_right == 548

    def test_round_trip_bit_exact(self):
        rng = np.random.default_rng(0)
        for shape, dtype in [((100, 130), np.uint8), ((257, 64), np.uint16),
                             ((64, 64), np.float64)]:
            if dtype is np.float64:
                raster = rng.random(shape)
            else:
                raster = rng.integers(0, np.iinfo(dtype).max, shape).astype(dtype)
            assert np.array_equal(stitch(tile(raster, 64)), raster)

    def test_small_tile_rejected(self):
        with pytest.raises(DataError):
            tile(np.zeros((64, 64)), 16)


class TestNormalize:
    def test_full_range_uint8(self):
        img = np.array([[0, 255], [128, 64]], dtype=np.uint8)
        out = normalize(img)
        assert out.max() == 1.0 and out.min() == 0.0
        assert out[1, 0] == pytest.approx(128 / 255)

    def test_constant_goes_to_zero(self):
        assert not normalize(np.full((4, 4), 7)).any()

    def test_linear_map(self):
        img = np.array([100.0, 200.0, 300.0])
        assert np.allclose(normalize(img), [(v - 100) / 200 for v in img])


class TestClassicAugment:
    def scene(self):
        rng = np.random.default_rng(0)
        img = rng.integers(0, 255, (32, 32)).astype(np.uint8)
        mask = rng.random((32, 32)) > 0.9
        return Scene(img, mask, "s")

    def test_flip_preserves_mask_count(self):
        sc = self.scene()
        for seed in range(10):
            out = classic_augment(sc, seed, blur_prob=0.0)
            assert out.mask.sum() == sc.mask.sum()

    def test_image_and_mask_flip_jointly(self):
        # run the mask through as an image and check identical geometry
        sc = self.scene()
        for seed in range(10):
            probe = Scene(sc.mask.astype(np.uint8) * 255, sc.mask, "p")
            out = classic_augment(probe, seed, blur_prob=0.0)
            assert np.array_equal(out.image > 127, out.mask)

    def test_double_horizontal_flip_identity(self):
        sc = self.scene()
        once = Scene(sc.image[:, ::-1], sc.mask[:, ::-1], "f")
        twice = Scene(once.image[:, ::-1], once.mask[:, ::-1], "ff")
        assert np.array_equal(twice.image, sc.image)

    def test_blur_of_constant_is_constant(self):
        sc = Scene(np.full((16, 16), 100, dtype=np.uint8),
                   np.zeros((16, 16), dtype=bool), "c")
        out = classic_augment(sc, 0, flip_prob=0.0, blur_prob=1.0)
        assert np.array_equal(out.image, sc.image)

    def test_deterministic(self):
        sc = self.scene()
        a = classic_augment(sc, 5)
        b = classic_augment(sc, 5)
        assert np.array_equal(a.image, b.image)
        assert np.array_equal(a.mask, b.mask)


class TestCrrp:
    def scene_with_target(self):
        img = np.full((64, 64), 50, dtype=np.uint8)
        mask = np.zeros((64, 64), dtype=bool)
        img[10:13, 10:13] = 200
        mask[10:13, 10:13] = True
        return Scene(img, mask, "t")

    def test_disjoint_paste_adds_pixels(self):
        sc = self.scene_with_target()
        cfg = CrrpConfig(paste_count=1, scale_range=(1.0, 1.0), angles=(0,),
                         seed=1)
        out, log = crrp(sc, None, cfg)
        assert log[0]["status"] == "ok"
        assert out.mask.sum() == sc.mask.sum() + 9

    def test_ratio_strictly_increases(self):
        sc = self.scene_with_target()
        before = sc.mask.mean()
        out, log = crrp(sc, None, CrrpConfig(paste_count=3, seed=2))
        assert any(e["status"] == "ok" for e in log)
        assert out.mask.mean() > before

    def test_paste_boxes_avoid_existing_targets(self):
        sc = self.scene_with_target()
        out, log = crrp(sc, None, CrrpConfig(paste_count=4, seed=3))
        gt_box = (10, 10, 12, 12)
        for e in log:
            if e["status"] != "ok":
                continue
            r0, c0, r1, c1 = e["dest_bbox"]
            assert r1 < gt_box[0] - 1 or r0 > gt_box[2] + 1 \
                or c1 < gt_box[1] - 1 or c0 > gt_box[3] + 1

    def test_region_count_never_decreases(self):
        rng = np.random.default_rng(4)
        for seed in range(10):
            sc = self.scene_with_target()
            out, _ = crrp(sc, None, CrrpConfig(paste_count=2, seed=seed))
            assert len(cluster8(out.mask)) >= len(cluster8(sc.mask))

    def test_no_targets_is_an_error(self):
        sc = Scene(np.zeros((32, 32), dtype=np.uint8),
                   np.zeros((32, 32), dtype=bool), "e")
        with pytest.raises(DataError):
            crrp(sc, None, CrrpConfig())

    def test_infeasible_paste_leaves_scene_unchanged(self):
        # target bbox blankets the scene; no background placement exists
        img = np.full((40, 40), 10, dtype=np.uint8)
        mask = np.zeros((40, 40), dtype=bool)
        mask[1, 1] = mask[38, 38] = mask[1, 38] = mask[38, 1] = mask[20, 20] = True
        sc = Scene(img, mask, "full")
        out, log = crrp(sc, None, CrrpConfig(paste_count=1, seed=0,
                                             min_separation=40))
        assert all(e["status"] == "failed" for e in log)
        assert np.array_equal(out.mask, sc.mask)
        assert np.array_equal(out.image, sc.image)

    def test_rotated_resized_paste_logs_parameters(self):
        sc = self.scene_with_target()
        out, log = crrp(sc, None, CrrpConfig(paste_count=1, seed=7))
        e = log[0]
        assert set(e) >= {"paste", "source_region", "angle", "scale", "status"}
        assert e["angle"] in (0, 90, 180, 270)


class TestSynth:
    def test_zero_targets_gives_empty_mask(self):
        scenes = synth_scenes(2, 64, TargetSpec(count_range=(0, 0)), seed=0)
        for sc in scenes:
            assert not sc.mask.any()

    def test_target_count_matches_cluster8(self):
        scenes = synth_scenes(10, 64, TargetSpec(count_range=(2, 3)), seed=1)
        for sc in scenes:
            n = len(cluster8(sc.mask))
            assert 2 <= n <= 3

    def test_seed_reproducible(self):
        a = synth_scenes(3, 64, seed=5)
        b = synth_scenes(3, 64, seed=5)
        for x, y in zip(a, b):
            assert np.array_equal(x.image, y.image)
            assert np.array_equal(x.mask, y.mask)

    def test_different_seeds_differ(self):
        a = synth_scenes(1, 64, seed=1)[0]
        b = synth_scenes(1, 64, seed=2)[0]
        assert not np.array_equal(a.image, b.image)

    def test_too_small_rejected(self):
        with pytest.raises(DataError):
            synth_scenes(1, 16)

    def test_targets_visible_above_background(self):
        sc = synth_scenes(1, 64, TargetSpec(count_range=(2, 2)), seed=3)[0]
        assert sc.image[sc.mask].mean() > sc.image[~sc.mask].mean() + 20


class TestSceneIO:
    def test_png_round_trips(self, tmp_path):
        rng = np.random.default_rng(0)
        img8 = rng.integers(0, 255, (16, 16)).astype(np.uint8)
        img16 = rng.integers(0, 65535, (16, 16)).astype(np.uint16)
        save_image(tmp_path / "a.png", img8)
        save_image(tmp_path / "b.png", img16)
        assert np.array_equal(load_image(tmp_path / "a.png"), img8)
        assert np.array_equal(load_image(tmp_path / "b.png"), img16)

    def test_mask_round_trip(self, tmp_path):
        mask = np.random.default_rng(1).random((16, 16)) > 0.5
        save_mask(tmp_path / "m.png", mask)
        assert np.array_equal(load_mask(tmp_path / "m.png"), mask)

    def test_prob_map_quantization(self, tmp_path):
        prob = np.random.default_rng(2).random((16, 16))
        save_prob_map(tmp_path / "p.png", prob)
        back = load_prob_map(tmp_path / "p.png")
        assert np.abs(back - prob).max() <= 0.5 / 65535 + 1e-12

    def test_manifest_round_trip(self, tmp_path):
        scenes = synth_scenes(3, 64, seed=0)
        entries = [save_scene_files(sc, tmp_path) for sc in scenes]
        write_manifest(tmp_path / "manifest.json", entries)
        loaded = read_manifest(tmp_path / "manifest.json")
        assert loaded == entries
        sc = load_scene(loaded[0], tmp_path)
        assert np.array_equal(sc.image, scenes[0].image)
        assert np.array_equal(sc.mask, scenes[0].mask)

    def test_manifest_missing_key_rejected(self, tmp_path):
        (tmp_path / "bad.json").write_text(json.dumps([{"id": "x"}]))
        with pytest.raises(DataError):
            read_manifest(tmp_path / "bad.json")
