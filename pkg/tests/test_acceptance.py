"""Acceptance suite: one test per criterion, one printed pass/fail line each.

Run with `pytest tests/test_acceptance.py -v -s` to see the lines as they
complete. The overfit and ablation criteria train real (desk-scale) models
and dominate the runtime.
"""

import math
import time

import numpy as np
import pytest

from conftest import tracked, weighted_sum
from sunet import elevation, fusion, projection
from sunet.bev2d import Bev2DConfig, pixel_accuracy, pretrain_2d
from sunet.cli import main
from sunet.diffcore import Tensor, grad_check, ops
from sunet.diffcore.ops import BatchNormState
from sunet.pointcloud_io import Scene, SynthConfig, generate_synthetic_scene
from sunet.sunet3d import SUNet3D, SUNet3DConfig
from sunet.train_eval import (
    RunConfig,
    default_ablation_grid,
    evaluate,
    infer,
    pretrain_bev,
    prepare_scene,
    run_ablation,
    train,
    validation_split,
    voxel_accuracy,
)
from test_sunet3d import jitter_params

DESK_SYNTH = dict(extent_xy=16.0, pylon_spacing=7.0, pylon_height=20.0,
                  corridor_half_width=5.0, catenary_sag=1.5,
                  vegetation_density=2.0, ground_density=3.0)
BENCH_SYNTH = dict(extent_xy=8.0, pylon_spacing=3.5, pylon_height=10.0,
                   corridor_half_width=2.5, catenary_sag=0.8,
                   vegetation_density=1.5, ground_density=2.0)


def report(criterion: int, description: str, ok: bool, detail: str = ""):
    status = "PASS" if ok else "FAIL"
    print(f"[criterion {criterion:2d}] {status}: {description}"
          + (f" ({detail})" if detail else ""))
    assert ok, f"criterion {criterion}: {description} ({detail})"


def desk_scenes(n, seed0=201, synth=DESK_SYNTH):
    return [generate_synthetic_scene(SynthConfig(rng_seed=seed0 + i, **synth))
            for i in range(n)]


def test_criterion_1_gradient_suite():
    t0 = time.time()
    rng = np.random.default_rng(42)
    worst = 0.0

    def check(fn, inputs, max_entries=None):
        nonlocal worst
        r = grad_check(fn, inputs, tol=1e-4, max_entries=max_entries,
                       rng=np.random.default_rng(0))
        worst = max(worst, r.max_rel_error)
        assert r.passed, r.max_rel_error

    # every primitive
    x, w, b = (tracked(rng, (1, 4, 4, 4, 2)), tracked(rng, (3, 3, 3, 2, 3)),
               tracked(rng, (3,)))
    check(lambda x, w, b: weighted_sum(ops.conv(x, w, b, padding=1)), [x, w, b], 25)
    x2, w2 = tracked(rng, (1, 6, 6, 2)), tracked(rng, (3, 3, 2, 4))
    check(lambda x, w: weighted_sum(ops.conv(x, w, None, stride=2, padding=1)),
          [x2, w2], 30)
    xb, g, be = tracked(rng, (1, 3, 3, 3, 4)), tracked(rng, (4,)), tracked(rng, (4,))
    check(lambda x, g, b: weighted_sum(
        ops.batch_norm(x, g, b, BatchNormState(4), training=True)), [xb, g, be], 25)
    state = BatchNormState(4)
    state.running_mean = rng.normal(size=4)
    state.running_var = 0.5 + rng.random(4)
    check(lambda x, g, b: weighted_sum(
        ops.batch_norm(x, g, b, state, training=False)), [xb, g, be], 25)
    for fn in (ops.relu, ops.sigmoid, lambda t: ops.softmax(t, axis=-1),
               lambda t: ops.log_softmax(t, axis=-1)):
        xa = tracked(rng, (3, 5), away_from_zero=0.2)
        check(lambda x: weighted_sum(fn(x)), [xa])
    xp = tracked(rng, (1, 4, 4, 4, 2), away_from_zero=0.05)
    check(lambda x: weighted_sum(ops.max_pool(x, 2)), [xp], 40)
    xu = tracked(rng, (1, 2, 2, 2, 3))
    check(lambda x: weighted_sum(ops.upsample(x, 2)), [xu])
    a, c = tracked(rng, (2, 3, 2)), tracked(rng, (2, 3, 3))
    check(lambda a, c: weighted_sum(ops.concat([a, c], axis=-1)), [a, c])
    a2, al = tracked(rng, (2, 3, 4)), tracked(rng, (2, 3, 1))
    check(lambda a, al: weighted_sum(ops.mul(ops.add(a, al), al)), [a2, al])
    xr = tracked(rng, (3, 4))
    check(lambda x: weighted_sum(ops.repeat_new_axis(x, 5, axis=1)), [xr])
    check(lambda x: ops.mean(ops.mul(x, x)), [xr])

    # end-to-end toy loss on an 8x8x16 tile, base 4, MFA + FS on
    cfg = SUNet3DConfig(tile_dims=(8, 8, 16), in_channels=2, base_channels=4,
                        use_mfa=True, use_fs=True)
    model = SUNet3D(cfg, rng=7)
    jitter_params(model.store, 100)
    data = np.random.default_rng(8)
    tile = data.normal(size=(8, 8, 16, 2))
    gt_class = data.integers(0, 5, (8, 8, 16))
    gt_region = data.integers(1, 3, (8, 8, 16))
    occupied = data.random((8, 8, 16)) < 0.3
    occupied.reshape(-1)[0] = True
    region_logits = Tensor(data.normal(size=(8, 8, 16, 3)), requires_grad=True)
    table = fusion.HierarchyTable()
    params = [p.tensor for p in model.store.trainable()]

    def toy_loss(*_):
        return fusion.hlc_loss(model.forward(tile, training=True), region_logits,
                               gt_class, gt_region, occupied, table)

    check(toy_loss, params + [region_logits], max_entries=2)

    elapsed = time.time() - t0
    report(1, "gradient suite: primitives + end-to-end toy loss at 1e-4",
           elapsed <= 300.0, f"max rel err {worst:.2e}, {elapsed:.1f}s")


def test_criterion_2_shape_ladder():
    cfg = SUNet3DConfig(tile_dims=(16, 16, 64), in_channels=4, base_channels=8)
    model = SUNet3D(cfg, rng=0)
    maps = model.level_maps(np.random.default_rng(0).normal(size=(16, 16, 64, 4)))
    ok = True
    for l in range(4):
        want_sp = (16 // 2**l, 16 // 2**l, 64 // 2**l)
        want_ch = 8 * 2**l
        ok &= maps.enc[l].shape == (1,) + want_sp + (want_ch,)
        ok &= maps.dec[l].shape == (1,) + want_sp + (want_ch,)
    report(2, "shape ladder: spatial tile/2^(l-1), channels base*2^(l-1)", ok)


def test_criterion_3_elevation_formulas():
    rng = np.random.default_rng(3)
    ok = True
    for _ in range(10_000):
        zg = rng.uniform(0.1, 500.0)
        ctx = elevation.ElevationContext(
            z_max_global=zg, z_max_scene=zg, z_min_local=np.zeros((1, 1)),
            occupied=np.ones((1, 1), bool), origin_xy=(0.0, 0.0), cell_size=1.0)
        ok &= elevation.absolute_elevation(0.0, ctx) == 1.0
        ok &= abs(elevation.absolute_elevation(zg, ctx) - 2.0) < 1e-12
    for _ in range(10_000):
        lo = rng.uniform(-50.0, 50.0)
        hi = lo + rng.uniform(0.01, 200.0)
        ctx = elevation.ElevationContext(
            z_max_global=hi, z_max_scene=hi, z_min_local=np.full((1, 1), lo),
            occupied=np.ones((1, 1), bool), origin_xy=(0.0, 0.0), cell_size=1.0)
        ok &= elevation.relative_elevation(lo, (0, 0), ctx) == 0.0
        ok &= abs(elevation.relative_elevation(hi, (0, 0), ctx) - 1.0) < 1e-12
    report(3, "elevation formulas: AE/RE endpoints exact over 10^4 samples", ok)


def test_criterion_4_loss_oracles():
    from test_fusion import hlc_loop_oracle, random_instance, wce_loop_oracle
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(100):
        obj, reg, gt_class, gt_region, occupied = random_instance(rng)
        fused = fusion.hlc_loss(Tensor(obj), Tensor(reg), gt_class, gt_region,
                                occupied, fusion.HierarchyTable()).item()
        worst = max(worst, abs(fused - hlc_loop_oracle(obj, reg, gt_class,
                                                       gt_region, occupied)))
        w = rng.uniform(0.5, 3.0, 5)
        plain = fusion.wce_loss(Tensor(obj), gt_class, w, occupied).item()
        worst = max(worst, abs(plain - wce_loop_oracle(obj, gt_class, w, occupied)))

    gt_class = np.full((1, 1, 1), 4)
    gt_region = np.full((1, 1, 1), 1)
    reg = np.zeros((1, 1, 1, 3))
    reg[..., 0] = -1000.0
    hand = fusion.hlc_loss(Tensor(np.zeros((1, 1, 1, 5))), Tensor(reg), gt_class,
                           gt_region, np.ones((1, 1, 1), bool),
                           fusion.HierarchyTable(10.0, 8.0)).item()
    hand_err = abs(hand - 80.0 * -math.log(0.1))
    report(4, "loss oracles: loop agreement 1e-10 and hand case 184.2068",
           worst < 1e-10 and hand_err < 1e-6,
           f"loop {worst:.1e}, hand {hand_err:.1e}")


def test_criterion_5_calibrator():
    rng = np.random.default_rng(5)
    ok = True
    for _ in range(50):
        w, h = (int(v) for v in rng.integers(2, 9, 2))
        depth = int(rng.integers(1, 8))
        logits = rng.normal(size=(w, h, 3))
        calib = fusion.calibrate_logits(logits, depth).region_logits_3d.values
        ok &= (calib == calib[:, :, :1, :]).all()          # depth invariance
        for i in range(w):                                 # loop oracle
            for j in range(h):
                for d in range(depth):
                    ok &= (calib[i, j, d] == logits[i, j]).all()
    report(5, "calibrator: exact depth broadcast on 50 random instances", ok)


def test_criterion_6_projection_conservation():
    rng = np.random.default_rng(6)
    ok = True
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(50, 500))
        xyz = np.column_stack([rng.uniform(-1, 9, n), rng.uniform(-1, 9, n),
                               rng.uniform(-1, 9, n)])
        scene = Scene(xyz, rng.integers(1, 5, n), rng.integers(0, 5, n),
                      rng.integers(1, 3, n), "acc")
        grid = projection.voxelize(scene, (0, 0, 0), (8, 8, 8), 1.0,
                                   feature_spec=("occupancy", "num_returns"))
        ok &= grid.occupancy.sum() + grid.num_dropped == n
        predicted = rng.integers(0, 5, (8, 8, 8))
        labels = projection.backproject_labels(grid, predicted, scene)
        for p in range(n):
            i, j, d = np.floor(scene.xyz[p]).astype(int)
            if 0 <= i < 8 and 0 <= j < 8 and 0 <= d < 8:
                ok &= labels[p] == predicted[i, j, d]
                worst = max(worst, abs(
                    grid.features[i, j, d, 1]
                    - scene.num_returns[grid.point_indices(i, j, d)].mean()))
            else:
                ok &= labels[p] == 0
    report(6, "projection: conservation, group-by means 1e-9, lookup exact",
           ok and worst < 1e-9, f"mean err {worst:.1e}")


@pytest.mark.slow
def test_criterion_7_overfit():
    t0 = time.time()
    scenes = desk_scenes(2)

    run = RunConfig(name="overfit", loss="hlc", epochs=300, seed=0,
                    grid_dims=(16, 16, 64), tile_dims=(16, 16),
                    base_channels=8, base_channels_2d=8,
                    epochs_2d=200, augment_2d=False)

    bev_dataset = []
    for s in scenes:
        bev = projection.project_bev(s, s.bounds.min[:2], (16, 16), 1.0)
        bev_dataset.append((bev.features, bev.region_labels))
    model2d, log2d = pretrain_2d(bev_dataset, Bev2DConfig(dims=(16, 16),
                                                          base_channels=8),
                                 epochs=200, augment=False, seed=0,
                                 target_accuracy=0.98)
    acc2d = pixel_accuracy(model2d, bev_dataset)

    result = train(run, scenes, scenes, bev_model=model2d,
                   target_train_accuracy=0.95)
    prepared = [prepare_scene(s, run, result.z_max_global) for s in scenes]
    acc3d = voxel_accuracy(result.model, prepared, run)
    elapsed = time.time() - t0
    report(7, "overfit: 2D >= 98% pixel acc (200 ep), 3D >= 95% voxel acc (300 ep)",
           acc2d >= 0.98 and len(log2d) <= 200
           and acc3d >= 0.95 and result.epochs_run <= 300 and elapsed <= 1800,
           f"2D {100 * acc2d:.1f}% @{len(log2d)} ep, "
           f"3D {100 * acc3d:.1f}% @{result.epochs_run} ep, {elapsed:.0f}s")


@pytest.mark.slow
def test_criterion_8_ablation_harness():
    scenes = desk_scenes(10, seed0=300, synth=BENCH_SYNTH)
    base = RunConfig(name="bench", seed=1, epochs=4, epochs_2d=12,
                     grid_dims=(8, 8, 16), tile_dims=(8, 8),
                     base_channels=4, base_channels_2d=4)
    configs = default_ablation_grid(base)
    assert len({cfg.feature_spec for cfg in configs}) == 2
    assert {cfg.loss for cfg in configs} == {"wce", "hlc"}
    assert {(cfg.use_mfa, cfg.use_fs) for cfg in configs} >= {
        (False, False), (True, False), (True, True)}

    table_a = run_ablation(configs, scenes)
    table_b = run_ablation(configs, scenes)
    deterministic = table_a.to_csv() == table_b.to_csv()

    # metrics of a row must match a fresh evaluate() of the same run
    train_s, val_s = validation_split(scenes)
    cfg0 = configs[0]
    redo = train(cfg0, train_s, val_s)
    redo.model.store.load_state_dict(redo.best_state)
    preds = np.concatenate([infer(redo.model, cfg0, s, redo.z_max_global)
                            for s in val_s])
    gts = np.concatenate([s.class_labels for s in val_s])
    oracle = evaluate(preds, gts)
    row = table_a.rows[0].report
    oracle_match = (np.array_equal(row.confusion, oracle.confusion)
                    and np.array_equal(row.f1, oracle.f1))

    # directional expectation, recorded but non-blocking
    f1 = {r.config.name: r.report.f1[1] for r in table_a.rows}
    direction = f1["sunet_hlc"] >= f1["aunet_wce_re"]
    print(f"[criterion  8] note: pylon F1 hlc={100 * f1['sunet_hlc']:.1f}% vs "
          f"wce={100 * f1['aunet_wce_re']:.1f}% "
          f"({'matches' if direction else 'does not match'} the expected "
          "direction; non-blocking)")

    report(8, "ablation harness: 5 configs complete deterministically, "
           "metrics match evaluate()", deterministic and oracle_match)


def test_criterion_9_metrics():
    rng = np.random.default_rng(9)
    ok = True
    for _ in range(1000):
        n = int(rng.integers(10, 60))
        gt = rng.integers(0, 5, n)
        pred = rng.integers(0, 5, n)
        rep = evaluate(pred, gt)
        cm = np.zeros((5, 5), dtype=int)
        for g, p in zip(gt, pred):
            cm[g, p] += 1
        ok &= np.array_equal(rep.confusion, cm)
        for c in range(5):
            tp, fp, fn = cm[c, c], cm[:, c].sum() - cm[c, c], cm[c, :].sum() - cm[c, c]
            prec = tp / (tp + fp) if tp + fp else 0.0
            rec = tp / (tp + fn) if tp + fn else 0.0
            f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
            ok &= rep.precision[c] == prec and rep.recall[c] == rec and rep.f1[c] == f1

    gt = np.array([1] * 8 + [1] * 2 + [0] * 2)
    pred = np.array([1] * 8 + [0] * 2 + [1] * 2)
    rep = evaluate(pred, gt)
    worked = (rep.precision[1] == 0.8 and rep.recall[1] == 0.8
              and abs(rep.f1[1] - 0.8) < 1e-15)
    report(9, "metrics: 1000 random vectors match confusion oracle, "
           "worked case P=R=F1=0.8", ok and worked)


@pytest.mark.slow
def test_criterion_10_determinism(tmp_path):
    cfg = tmp_path / "det.ini"
    cfg.write_text("""\
[synth]
num_scenes = 2
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
loss = hlc
epochs = 3
epochs_2d = 3
base_channels = 4
base_channels_2d = 4
seed = 0
""")

    def pipeline(tag):
        d = tmp_path / tag
        scenes_dir = d / "scenes"
        assert main(["synth", "--config", str(cfg), "--out-dir",
                     str(scenes_dir)]) == 0
        scene_files = sorted(str(p) for p in scenes_dir.glob("scene_*.csv"))
        bev = d / "bev.sunck"
        assert main(["train2d", "--config", str(cfg), "--out", str(bev),
                     *scene_files]) == 0
        ckpt = d / "model.sunck"
        assert main(["train3d", "--config", str(cfg), "--out", str(ckpt),
                     "--bev-checkpoint", str(bev), *scene_files]) == 0
        labeled = d / "labeled"
        assert main(["infer", "--config", str(cfg), "--checkpoint", str(ckpt),
                     "--out-dir", str(labeled), scene_files[0]]) == 0
        labeled_file = next(labeled.glob("*_labeled.csv"))
        metrics = d / "metrics"
        assert main(["eval", "--config", str(cfg), "--out-dir", str(metrics),
                     str(labeled_file)]) == 0
        img = d / "view.ppm"
        assert main(["render", "--config", str(cfg), "--view", "side",
                     "--out", str(img), scene_files[0]]) == 0
        return {
            "scene": (scenes_dir / "scene_000.csv").read_bytes(),
            "manifest": (scenes_dir / "manifest.json").read_bytes(),
            "bev_ckpt": bev.read_bytes(),
            "ckpt": ckpt.read_bytes(),
            "labeled": labeled_file.read_bytes(),
            "metrics_csv": (metrics / "metrics.csv").read_bytes(),
            "metrics_txt": (metrics / "metrics.txt").read_bytes(),
            "image": img.read_bytes(),
        }

    a = pipeline("a")
    b = pipeline("b")
    mismatched = [k for k in a if a[k] != b[k]]
    report(10, "determinism: repeated commands yield bit-identical artifacts",
           not mismatched, f"mismatched: {mismatched}" if mismatched else "all equal")
