import json

import numpy as np
import pytest

from sunet.cli import ConfigError, load_config, main
from sunet.pointcloud_io import read_points

TINY_CONFIG = """\
[synth]
num_scenes = 3
extent_xy = 8.0
pylon_spacing = 3.5
pylon_height = 10.0
corridor_half_width = 2.5
catenary_sag = 0.8
vegetation_density = 1.5
ground_density = 2.0

[grid]
width = 8
height = 8
depth = 16
voxel_size = 1.0
tile_w = 8
tile_h = 8

[run]
loss = wce
epochs = 2
epochs_2d = 2
base_channels = 4
base_channels_2d = 4
seed = 0
"""


@pytest.fixture()
def cfg_path(tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(TINY_CONFIG)
    return str(path)


@pytest.fixture()
def scene_files(tmp_path, cfg_path):
    out = tmp_path / "scenes"
    assert main(["synth", "--config", cfg_path, "--out-dir", str(out)]) == 0
    return sorted(str(p) for p in out.glob("scene_*.csv"))


class TestConfig:
    def test_defaults_without_file(self):
        cfg = load_config(None)
        assert cfg["run"]["loss"] == "hlc"
        assert cfg["grid"]["width"] == 16

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[run]\nlose = hlc\n")
        with pytest.raises(ConfigError, match="unknown config key"):
            load_config(str(path))

    def test_unknown_section_rejected(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[cheese]\nkind = brie\n")
        with pytest.raises(ConfigError, match="unknown config section"):
            load_config(str(path))

    def test_missing_file_rejected(self):
        with pytest.raises(ConfigError, match="not found"):
            load_config("/nonexistent/config.ini")

    def test_bad_value_rejected(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[run]\nepochs = soon\n")
        with pytest.raises(ConfigError, match="bad value"):
            load_config(str(path))


class TestSynth:
    def test_writes_scenes_and_manifest(self, tmp_path, cfg_path):
        out = tmp_path / "s"
        assert main(["synth", "--config", cfg_path, "--out-dir", str(out)]) == 0
        files = sorted(out.glob("scene_*.csv"))
        assert len(files) == 3
        manifest = json.loads((out / "manifest.json").read_text())
        assert len(manifest["scenes"]) == 3

    def test_rerun_is_byte_identical(self, tmp_path, cfg_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        main(["synth", "--config", cfg_path, "--out-dir", str(out1)])
        main(["synth", "--config", cfg_path, "--out-dir", str(out2)])
        for f1, f2 in zip(sorted(out1.iterdir()), sorted(out2.iterdir())):
            assert f1.name == f2.name
            assert f1.read_bytes() == f2.read_bytes()

    def test_manifest_bounds_match_read_back_scenes(self, tmp_path, cfg_path):
        out = tmp_path / "s"
        main(["synth", "--config", cfg_path, "--out-dir", str(out)])
        manifest = json.loads((out / "manifest.json").read_text())
        for entry in manifest["scenes"]:
            scene = read_points(out / entry["file"], "csv")
            assert entry["num_points"] == len(scene)
            np.testing.assert_allclose(entry["bounds"]["min"], scene.bounds.min)
            np.testing.assert_allclose(entry["bounds"]["max"], scene.bounds.max)


class TestVoxelize:
    def test_dumps_grids(self, tmp_path, cfg_path, scene_files):
        out = tmp_path / "grids"
        assert main(["voxelize", "--config", cfg_path, "--out-dir", str(out),
                     *scene_files]) == 0
        assert len(list(out.glob("*.sunvg"))) == len(scene_files)


class TestTraining:
    def test_train2d_writes_checkpoint_and_log(self, tmp_path, cfg_path, scene_files):
        ckpt = tmp_path / "bev.sunck"
        assert main(["train2d", "--config", cfg_path, "--out", str(ckpt),
                     *scene_files]) == 0
        assert ckpt.exists()
        log_lines = (tmp_path / "bev.sunck.log").read_text().strip().split("\n")
        assert len(log_lines) == 2  # one line per epoch

    def test_train3d_hlc_without_bev_checkpoint_exits_2(self, tmp_path, scene_files):
        cfg = tmp_path / "hlc.ini"
        cfg.write_text(TINY_CONFIG.replace("loss = wce", "loss = hlc"))
        code = main(["train3d", "--config", str(cfg), "--out",
                     str(tmp_path / "m.sunck"), *scene_files])
        assert code == 2

    def test_train3d_wce_and_infer_eval_round_trip(self, tmp_path, cfg_path,
                                                   scene_files):
        ckpt = tmp_path / "m3d.sunck"
        assert main(["train3d", "--config", cfg_path, "--out", str(ckpt),
                     *scene_files]) == 0
        log_lines = (str(ckpt) + ".log")
        assert len(open(log_lines).read().strip().split("\n")) == 2

        labeled_dir = tmp_path / "labeled"
        assert main(["infer", "--config", cfg_path, "--checkpoint", str(ckpt),
                     "--out-dir", str(labeled_dir), scene_files[0]]) == 0
        labeled = next(labeled_dir.glob("*_labeled.csv"))
        scene = read_points(scene_files[0], "csv")
        assert len(labeled.read_text().strip().split("\n")) == len(scene)

        metrics_dir = tmp_path / "metrics"
        assert main(["eval", "--config", cfg_path, "--out-dir",
                     str(metrics_dir), str(labeled)]) == 0
        assert (metrics_dir / "metrics.csv").exists()
        assert (metrics_dir / "metrics.txt").exists()

    def test_full_hlc_pipeline(self, tmp_path, scene_files):
        cfg = tmp_path / "hlc.ini"
        cfg.write_text(TINY_CONFIG.replace("loss = wce", "loss = hlc"))
        bev = tmp_path / "bev.sunck"
        assert main(["train2d", "--config", str(cfg), "--out", str(bev),
                     *scene_files]) == 0
        ckpt = tmp_path / "m3d.sunck"
        assert main(["train3d", "--config", str(cfg), "--out", str(ckpt),
                     "--bev-checkpoint", str(bev), *scene_files]) == 0
        assert ckpt.exists()

    def test_checkpoint_config_mismatch_exits_3(self, tmp_path, cfg_path,
                                                scene_files):
        ckpt = tmp_path / "m3d.sunck"
        main(["train3d", "--config", cfg_path, "--out", str(ckpt), *scene_files])
        other = tmp_path / "other.ini"
        other.write_text(TINY_CONFIG.replace("base_channels = 4",
                                             "base_channels = 8"))
        code = main(["infer", "--config", str(other), "--checkpoint", str(ckpt),
                     "--out-dir", str(tmp_path / "x"), scene_files[0]])
        assert code == 3

    def test_train3d_determinism(self, tmp_path, cfg_path, scene_files):
        a, b = tmp_path / "a.sunck", tmp_path / "b.sunck"
        main(["train3d", "--config", cfg_path, "--out", str(a), *scene_files])
        main(["train3d", "--config", cfg_path, "--out", str(b), *scene_files])
        assert a.read_bytes() == b.read_bytes()

    def test_eval_on_ground_truth_is_perfect(self, tmp_path, cfg_path,
                                             scene_files):
        # copy the class column into the prediction slot
        labeled = tmp_path / "gt_labeled.csv"
        rows = open(scene_files[0]).read().strip().split("\n")
        labeled.write_text("".join(f"{r},{r.split(',')[4]}\n" for r in rows))
        out = tmp_path / "m"
        assert main(["eval", "--config", cfg_path, "--out-dir", str(out),
                     str(labeled)]) == 0
        csv = (out / "metrics.csv").read_text().strip().split("\n")
        for line in csv[1:]:
            name, p, r, f1 = line.split(",")
            assert float(f1) == 100.0


class TestAblate:
    def test_ablation_writes_tables(self, tmp_path, cfg_path, scene_files):
        out = tmp_path / "ab"
        assert main(["ablate", "--config", cfg_path, "--out-dir", str(out),
                     *scene_files]) == 0
        csv = (out / "ablation.csv").read_text().strip().split("\n")
        assert len(csv) == 6  # header + 5 configurations
        assert (out / "ablation.txt").exists()


class TestRender:
    def test_bev_and_side_views(self, tmp_path, cfg_path, scene_files):
        for view in ("bev", "side"):
            out = tmp_path / f"{view}.ppm"
            assert main(["render", "--config", cfg_path, "--view", view,
                         "--out", str(out), scene_files[0]]) == 0
            header = out.read_bytes()[:2]
            assert header == b"P6"

    def test_deterministic_bytes(self, tmp_path, cfg_path, scene_files):
        a, b = tmp_path / "a.ppm", tmp_path / "b.ppm"
        main(["render", "--config", cfg_path, "--out", str(a), scene_files[0]])
        main(["render", "--config", cfg_path, "--out", str(b), scene_files[0]])
        assert a.read_bytes() == b.read_bytes()

    def test_pylon_pixel_has_pylon_color(self, tmp_path, cfg_path, scene_files):
        from sunet.pointcloud_io import ObjectClass
        from sunet.render import PALETTE, render_bev

        scene = read_points(scene_files[0], "csv")
        img = render_bev(scene, pixel_size=1.0)
        # highest point of the column holding the first pylon's top
        pylon_pts = scene.xyz[scene.class_labels == int(ObjectClass.PYLON)]
        top = pylon_pts[np.argmax(pylon_pts[:, 2])]
        ix = int((top[0] - scene.bounds.min[0]) // 1.0)
        iy = int((top[1] - scene.bounds.min[1]) // 1.0)
        row = img.shape[0] - 1 - iy
        assert tuple(img[row, ix]) == PALETTE[int(ObjectClass.PYLON)]

    def test_missing_class_color_absent(self, tmp_path, cfg_path):
        # scene without vegetation must not contain the vegetation color
        from sunet.render import PALETTE, render_bev
        from sunet.pointcloud_io import ObjectClass, SynthConfig, generate_synthetic_scene

        scene = generate_synthetic_scene(SynthConfig(
            extent_xy=8.0, pylon_spacing=3.5, pylon_height=10.0,
            corridor_half_width=2.5, catenary_sag=0.8,
            vegetation_density=0.0, ground_density=2.0, rng_seed=9))
        img = render_bev(scene, pixel_size=1.0)
        veg = np.array(PALETTE[int(ObjectClass.VEGETATION)])
        assert not (img == veg).all(axis=-1).any()


class TestExitCodes:
    def test_generic_error_is_1(self, tmp_path, cfg_path):
        assert main(["infer", "--config", cfg_path, "--checkpoint",
                     "/nonexistent.sunck", "--out-dir", str(tmp_path),
                     "/nonexistent.csv"]) == 1

    def test_config_error_is_2(self, tmp_path, scene_files):
        bad = tmp_path / "bad.ini"
        bad.write_text("[run]\nmystery = 1\n")
        assert main(["synth", "--config", str(bad),
                     "--out-dir", str(tmp_path / "x")]) == 2
