"""Training, inference, metrics, and the ablation harness.

The 3D network trains tile-by-tile (batch size 1) with either weighted
cross-entropy or the layout-consistency loss; with the latter, a pretrained
2D network supplies frozen regional logits per scene. Checkpoints keep the
best validation macro-F1 state.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import elevation, fusion, projection
from .bev2d import Bev2D, Bev2DConfig, pretrain_2d
from .diffcore import Adam, NonFiniteError, no_grad
from .pointcloud_io import CLASS_NAMES, NUM_CLASSES, ObjectClass, Scene
from .sunet3d import SUNet3D, SUNet3DConfig


class TrainError(RuntimeError):
    """Configuration or stability failure during training."""


FOREGROUND = tuple(int(c) for c in (ObjectClass.PYLON, ObjectClass.POWERLINE,
                                    ObjectClass.VEGETATION, ObjectClass.GROUND))


@dataclass(frozen=True)
class RunConfig:
    """One training/evaluation configuration (a row of the ablation grid)."""

    name: str = "run"
    feature_spec: tuple[str, ...] = ("occupancy", "abs_elev", "rel_elev", "num_returns")
    loss: str = "hlc"                 # "wce" or "hlc"
    use_mfa: bool = True
    use_fs: bool = False
    epochs: int = 40
    seed: int = 0
    lr: float = 1e-3
    grid_dims: tuple[int, int, int] = (16, 16, 64)
    voxel_size: float = 1.0
    tile_dims: tuple[int, int] = (16, 16)
    base_channels: int = 8
    base_channels_2d: int = 8
    levels: int = 4
    parent_weight: float = 10.0
    child_weight: float = 8.0
    epochs_2d: int = 60
    augment_2d: bool = True

    def __post_init__(self):
        if not self.feature_spec:
            raise TrainError("feature_spec must be non-empty")
        for f in self.feature_spec:
            if f not in projection.FEATURE_NAMES:
                raise TrainError(f"unknown feature {f!r}")
        if self.loss not in ("wce", "hlc"):
            raise TrainError(f"loss must be wce or hlc, got {self.loss!r}")
        if self.epochs < 1:
            raise TrainError("epochs must be >= 1")
        w, h, d = self.grid_dims
        tw, th = self.tile_dims
        if w % tw or h % th:
            raise TrainError(f"grid {self.grid_dims} not tileable by {self.tile_dims}")
        div = 2 ** (self.levels - 1)
        if tw % div or th % div or d % div:
            raise TrainError(f"tile {tw}x{th}x{d} not divisible by {div}")

    def model_config(self) -> SUNet3DConfig:
        return SUNet3DConfig(
            tile_dims=(self.tile_dims[0], self.tile_dims[1], self.grid_dims[2]),
            in_channels=len(self.feature_spec), levels=self.levels,
            base_channels=self.base_channels, use_mfa=self.use_mfa,
            use_fs=self.use_fs)

    def bev_config(self) -> Bev2DConfig:
        return Bev2DConfig(dims=(self.grid_dims[0], self.grid_dims[1]),
                           base_channels=self.base_channels_2d, levels=self.levels)

    def hierarchy(self) -> fusion.HierarchyTable:
        return fusion.HierarchyTable(parent_weight=self.parent_weight,
                                     child_weight=self.child_weight)


@dataclass
class PreparedScene:
    """A scene converted to grids once, reused across epochs."""

    scene: Scene
    grid: projection.VoxelGrid
    occupied: np.ndarray
    bev: projection.BevGrid
    region_logits: np.ndarray | None = None  # (W, H, 3) from the frozen 2D net
    tiles: list[tuple[int, int]] = field(default_factory=list)


def prepare_scene(scene: Scene, run: RunConfig, z_max_global: float,
                  bev_model: Bev2D | None = None) -> PreparedScene:
    """Voxelize + BEV-project a scene on its bounds-anchored grid."""
    w, h, d = run.grid_dims
    origin = scene.bounds.min
    ctx = elevation.build_context(scene, origin[:2], (w, h), run.voxel_size,
                                  z_max_global=z_max_global)
    grid = projection.voxelize(scene, origin, (w, h, d), run.voxel_size,
                               feature_spec=run.feature_spec, elev_ctx=ctx)
    bev = projection.project_bev(scene, origin[:2], (w, h), run.voxel_size)
    prepared = PreparedScene(scene=scene, grid=grid,
                             occupied=grid.occupancy > 0, bev=bev)
    tw, th = run.tile_dims
    prepared.tiles = [(i, j) for i in range(0, w, tw) for j in range(0, h, th)]
    if bev_model is not None:
        with no_grad():
            prepared.region_logits = bev_model.forward(bev.features).values
    return prepared


def _tile_slices(ij: tuple[int, int], run: RunConfig):
    i, j = ij
    tw, th = run.tile_dims
    return slice(i, i + tw), slice(j, j + th)


def _tile_loss(model: SUNet3D, prepared: PreparedScene, run: RunConfig,
               ij: tuple[int, int], class_weights: np.ndarray,
               table: fusion.HierarchyTable, training: bool):
    si, sj = _tile_slices(ij, run)
    logits = model.forward(prepared.grid.features[si, sj], training=training)
    gt_class = prepared.grid.labels[si, sj]
    occupied = prepared.occupied[si, sj]
    if run.loss == "wce":
        return fusion.wce_loss(logits, gt_class, class_weights, occupied)
    calib = fusion.calibrate_logits(prepared.region_logits[si, sj],
                                    depth=run.grid_dims[2])
    return fusion.hlc_loss(logits, calib, gt_class,
                           prepared.grid.region_labels[si, sj], occupied, table)


def voxel_accuracy(model: SUNet3D, prepared_scenes, run: RunConfig) -> float:
    """Fraction of occupied voxels whose argmax class matches ground truth."""
    correct = total = 0
    with no_grad():
        for p in prepared_scenes:
            for ij in p.tiles:
                si, sj = _tile_slices(ij, run)
                pred = np.argmax(model.forward(p.grid.features[si, sj]).values,
                                 axis=-1)
                occ = p.occupied[si, sj]
                correct += int((pred[occ] == p.grid.labels[si, sj][occ]).sum())
                total += int(occ.sum())
    return correct / max(total, 1)


@dataclass
class TrainResult:
    model: SUNet3D
    z_max_global: float
    log: list[str]
    best_val_f1: float
    best_state: dict[str, np.ndarray]
    epochs_run: int


def train(run: RunConfig, train_scenes: list[Scene], val_scenes: list[Scene],
          bev_model: Bev2D | None = None,
          target_train_accuracy: float | None = None) -> TrainResult:
    """Train the 3D network; the 2D network stays frozen.

    Keeps the state with the best validation macro-F1 (foreground classes,
    point level). Aborts on non-finite loss rather than skipping tiles.
    """
    if run.loss == "hlc" and bev_model is None:
        raise TrainError("loss=hlc requires a pretrained 2D network")
    if not train_scenes:
        raise TrainError("no training scenes")
    z_max_global = elevation.dataset_max_elevation(train_scenes)
    prepared = [prepare_scene(s, run, z_max_global, bev_model)
                for s in train_scenes]
    prepared_val = [prepare_scene(s, run, z_max_global, None) for s in val_scenes]

    all_labels = np.concatenate([p.grid.labels[p.occupied] for p in prepared])
    class_weights = fusion.balanced_class_weights(all_labels)
    table = run.hierarchy()

    model = SUNet3D(run.model_config(), rng=np.random.default_rng(run.seed))
    if bev_model is not None:
        bev_model.store.set_requires_grad(False)
    opt = Adam(model.store.trainable(), lr=run.lr)

    log: list[str] = []
    best_f1 = -1.0
    best_state = model.store.state_dict()
    epochs_run = 0
    try:
        for epoch in range(1, run.epochs + 1):
            epochs_run = epoch
            total = 0.0
            n_tiles = 0
            for p in prepared:
                for ij in p.tiles:
                    opt.zero_grad()
                    loss = _tile_loss(model, p, run, ij, class_weights, table,
                                      training=True)
                    loss.backward()
                    opt.step()
                    total += loss.item()
                    n_tiles += 1
            val_f1 = _macro_f1(model, prepared_val or prepared, run)
            log.append(f"{epoch},{total / n_tiles:.6f},{val_f1:.6f}")
            if val_f1 > best_f1:
                best_f1 = val_f1
                best_state = model.store.state_dict()
            if target_train_accuracy is not None:
                if voxel_accuracy(model, prepared, run) >= target_train_accuracy:
                    break
    except NonFiniteError as exc:
        raise TrainError(
            f"diverged at epoch {epochs_run} (non-finite values); "
            f"lower the learning rate ({run.lr}) or inspect the inputs") from exc
    return TrainResult(model=model, z_max_global=z_max_global, log=log,
                       best_val_f1=best_f1, best_state=best_state,
                       epochs_run=epochs_run)


def _macro_f1(model: SUNet3D, prepared_scenes, run: RunConfig) -> float:
    preds, gts = [], []
    for p in prepared_scenes:
        preds.append(_infer_prepared(model, p, run))
        gts.append(p.scene.class_labels)
    report = evaluate(np.concatenate(preds), np.concatenate(gts))
    return float(np.mean([report.f1[c] for c in FOREGROUND]))


def _infer_prepared(model: SUNet3D, p: PreparedScene, run: RunConfig) -> np.ndarray:
    w, h, d = run.grid_dims
    pred_grid = np.zeros((w, h, d), dtype=np.int64)
    with no_grad():
        for ij in p.tiles:
            si, sj = _tile_slices(ij, run)
            logits = model.forward(p.grid.features[si, sj]).values
            pred_grid[si, sj] = np.argmax(logits, axis=-1)
    return projection.backproject_labels(p.grid, pred_grid, p.scene)


def infer(model: SUNet3D, run: RunConfig, scene: Scene,
          z_max_global: float) -> np.ndarray:
    """Per-point class labels: voxelize, forward tiles, argmax (ties to the
    lowest class index), back-project."""
    prepared = prepare_scene(scene, run, z_max_global, None)
    return _infer_prepared(model, prepared, run)


@dataclass
class MetricsReport:
    """Per-class precision/recall/F1 plus the raw confusion matrix."""

    confusion: np.ndarray         # (K, K), rows = ground truth
    precision: np.ndarray         # fractions in [0, 1]
    recall: np.ndarray
    f1: np.ndarray
    accuracy: float
    class_names: tuple[str, ...] = CLASS_NAMES

    def headline(self) -> dict[str, dict[str, float]]:
        """The four foreground classes as percentages."""
        out = {}
        for c in FOREGROUND:
            out[self.class_names[c]] = {
                "precision": 100.0 * self.precision[c],
                "recall": 100.0 * self.recall[c],
                "f1": 100.0 * self.f1[c],
            }
        return out

    def to_text(self) -> str:
        lines = [f"{'class':<12}{'precision':>10}{'recall':>10}{'f1':>10}"]
        for c in FOREGROUND:
            lines.append(f"{self.class_names[c]:<12}"
                         f"{100 * self.precision[c]:>10.2f}"
                         f"{100 * self.recall[c]:>10.2f}"
                         f"{100 * self.f1[c]:>10.2f}")
        lines.append(f"overall accuracy: {100 * self.accuracy:.2f}%")
        return "\n".join(lines)

    def to_csv(self) -> str:
        lines = ["class,precision,recall,f1"]
        for c in FOREGROUND:
            lines.append(f"{self.class_names[c]},{100 * self.precision[c]:.4f},"
                         f"{100 * self.recall[c]:.4f},{100 * self.f1[c]:.4f}")
        return "\n".join(lines) + "\n"


def evaluate(pred_labels: np.ndarray, gt_labels: np.ndarray,
             num_classes: int = NUM_CLASSES) -> MetricsReport:
    """Standard precision/recall/F1 from the confusion matrix."""
    pred = np.asarray(pred_labels).reshape(-1)
    gt = np.asarray(gt_labels).reshape(-1)
    if pred.shape != gt.shape:
        raise TrainError(f"length mismatch: {pred.shape} vs {gt.shape}")
    cm = np.bincount(gt * num_classes + pred,
                     minlength=num_classes * num_classes)
    cm = cm.reshape(num_classes, num_classes)
    tp = np.diag(cm).astype(np.float64)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    precision = np.divide(tp, tp + fp, out=np.zeros(num_classes), where=tp + fp > 0)
    recall = np.divide(tp, tp + fn, out=np.zeros(num_classes), where=tp + fn > 0)
    pr = precision + recall
    f1 = np.divide(2 * precision * recall, pr, out=np.zeros(num_classes),
                   where=pr > 0)
    accuracy = float(tp.sum() / max(len(gt), 1))
    return MetricsReport(confusion=cm, precision=precision, recall=recall,
                         f1=f1, accuracy=accuracy)


# ---------------------------------------------------------------------------
# ablation harness


def validation_split(scenes: list[Scene]) -> tuple[list[Scene], list[Scene]]:
    """Hold out the last 12% of scenes (at least one) for validation."""
    if len(scenes) < 2:
        return list(scenes), list(scenes)
    n_val = max(1, round(0.12 * len(scenes)))
    return list(scenes[:-n_val]), list(scenes[-n_val:])


def default_ablation_grid(base: RunConfig) -> list[RunConfig]:
    """Rows mirroring the feature / loss / module ablation axes."""
    no_re = tuple(f for f in base.feature_spec if f != "rel_elev")
    return [
        replace(base, name="aunet_wce", feature_spec=no_re, loss="wce",
                use_mfa=False, use_fs=False),
        replace(base, name="aunet_wce_re", loss="wce", use_mfa=False, use_fs=False),
        replace(base, name="sunet_hlc", loss="hlc", use_mfa=False, use_fs=False),
        replace(base, name="sunet_hlc_mfa", loss="hlc", use_mfa=True, use_fs=False),
        replace(base, name="sunet_hlc_mfa_fs", loss="hlc", use_mfa=True, use_fs=True),
    ]


@dataclass
class AblationRow:
    config: RunConfig
    report: MetricsReport


@dataclass
class AblationTable:
    rows: list[AblationRow]

    def to_csv(self) -> str:
        header = ["config", "features", "loss", "mfa", "fs"]
        for c in FOREGROUND:
            name = CLASS_NAMES[c]
            header += [f"{name}_p", f"{name}_r", f"{name}_f1"]
        lines = [",".join(header)]
        for row in self.rows:
            cells = [row.config.name, "+".join(row.config.feature_spec),
                     row.config.loss, str(int(row.config.use_mfa)),
                     str(int(row.config.use_fs))]
            for c in FOREGROUND:
                cells += [f"{100 * row.report.precision[c]:.4f}",
                          f"{100 * row.report.recall[c]:.4f}",
                          f"{100 * row.report.f1[c]:.4f}"]
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        lines = [f"{'config':<20}{'loss':<6}{'mfa':<5}{'fs':<5}"
                 + "".join(f"{CLASS_NAMES[c] + ' F1':>15}" for c in FOREGROUND)]
        for row in self.rows:
            lines.append(f"{row.config.name:<20}{row.config.loss:<6}"
                         f"{int(row.config.use_mfa):<5}{int(row.config.use_fs):<5}"
                         + "".join(f"{100 * row.report.f1[c]:>15.2f}"
                                   for c in FOREGROUND))
        return "\n".join(lines)


def run_ablation(configs: list[RunConfig], scenes: list[Scene]) -> AblationTable:
    """Train and evaluate every configuration on identical splits and seeds.

    The 2D network is pretrained once (it is identical across rows) and
    reused by every HLC row.
    """
    train_scenes, val_scenes = validation_split(scenes)
    bev_model = None
    if any(cfg.loss == "hlc" for cfg in configs):
        bev_model = pretrain_bev(configs[0], train_scenes)
    rows = []
    for cfg in configs:
        result = train(cfg, train_scenes, val_scenes,
                       bev_model=bev_model if cfg.loss == "hlc" else None)
        result.model.store.load_state_dict(result.best_state)
        preds, gts = [], []
        for scene in val_scenes:
            preds.append(infer(result.model, cfg, scene, result.z_max_global))
            gts.append(scene.class_labels)
        rows.append(AblationRow(config=cfg,
                                report=evaluate(np.concatenate(preds),
                                                np.concatenate(gts))))
    return AblationTable(rows=rows)


def pretrain_bev(run: RunConfig, scenes: list[Scene],
                 target_accuracy: float | None = None) -> Bev2D:
    """Pretrain the regional network on the scenes' BEV projections."""
    dataset = []
    for scene in scenes:
        bev = projection.project_bev(scene, scene.bounds.min[:2],
                                     run.grid_dims[:2], run.voxel_size)
        dataset.append((bev.features, bev.region_labels))
    model, _ = pretrain_2d(dataset, run.bev_config(), epochs=run.epochs_2d,
                           augment=run.augment_2d, seed=run.seed, lr=run.lr,
                           target_accuracy=target_accuracy)
    return model
