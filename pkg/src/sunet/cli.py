"""Command-line entry point: synthesis, preprocessing, training, inference,
evaluation, ablation, and rendering.

The INI config file is the source of truth; flags override it. Exit codes:
0 success, 1 generic failure, 2 usage/config error, 3 artifact mismatch.
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
from pathlib import Path

import numpy as np

from . import render, train_eval
from .bev2d import Bev2D
from .diffcore import load_checkpoint, save_checkpoint
from .pointcloud_io import (
    FormatError,
    GenerationError,
    SynthConfig,
    generate_synthetic_scene,
    read_points,
    write_points,
)
from .projection import ProjectionError, voxelize, write_voxel_grid
from .train_eval import RunConfig, TrainError, default_ablation_grid, evaluate

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_ARTIFACT = 3


class ConfigError(ValueError):
    """Bad config file or invalid command usage."""


class ArtifactError(ValueError):
    """On-disk artifact does not match the requested configuration."""


_SYNTH_KEYS = {
    "num_scenes": int,
    "format": str,
    "extent_xy": float,
    "pylon_spacing": float,
    "pylon_height": float,
    "corridor_half_width": float,
    "catenary_sag": float,
    "vegetation_density": float,
    "ground_density": float,
}
_GRID_KEYS = {
    "width": int,
    "height": int,
    "depth": int,
    "voxel_size": float,
    "tile_w": int,
    "tile_h": int,
}
_RUN_KEYS = {
    "features": str,
    "loss": str,
    "use_mfa": bool,
    "use_fs": bool,
    "epochs": int,
    "seed": int,
    "lr": float,
    "base_channels": int,
    "base_channels_2d": int,
    "levels": int,
    "parent_weight": float,
    "child_weight": float,
    "epochs_2d": int,
    "augment_2d": bool,
}
_SCHEMA = {"synth": _SYNTH_KEYS, "grid": _GRID_KEYS, "run": _RUN_KEYS}

_DEFAULTS = {
    "synth": {"num_scenes": 4, "format": "csv", "extent_xy": 16.0,
              "pylon_spacing": 7.0, "pylon_height": 20.0,
              "corridor_half_width": 5.0, "catenary_sag": 1.5,
              "vegetation_density": 2.0, "ground_density": 3.0},
    "grid": {"width": 16, "height": 16, "depth": 64, "voxel_size": 1.0,
             "tile_w": 16, "tile_h": 16},
    "run": {"features": "occupancy,abs_elev,rel_elev,num_returns",
            "loss": "hlc", "use_mfa": True, "use_fs": False, "epochs": 30,
            "seed": 0, "lr": 1e-3, "base_channels": 8, "base_channels_2d": 8,
            "levels": 4, "parent_weight": 10.0, "child_weight": 8.0,
            "epochs_2d": 40, "augment_2d": True},
}


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {raw!r}")


def load_config(path: str | None) -> dict:
    """Read the INI config, rejecting unknown sections and keys."""
    values = {sec: dict(defaults) for sec, defaults in _DEFAULTS.items()}
    if path is None:
        return values
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
            conv = _SCHEMA[section][key]
            try:
                values[section][key] = _parse_bool(raw) if conv is bool else conv(raw)
            except ConfigError:
                raise
            except ValueError:
                raise ConfigError(f"bad value for {section}.{key}: {raw!r}") from None
    return values


def build_run_config(cfg: dict, seed_override: int | None = None) -> RunConfig:
    run = cfg["run"]
    grid = cfg["grid"]
    features = tuple(f.strip() for f in run["features"].split(",") if f.strip())
    try:
        return RunConfig(
            feature_spec=features, loss=run["loss"], use_mfa=run["use_mfa"],
            use_fs=run["use_fs"], epochs=run["epochs"],
            seed=run["seed"] if seed_override is None else seed_override,
            lr=run["lr"],
            grid_dims=(grid["width"], grid["height"], grid["depth"]),
            voxel_size=grid["voxel_size"],
            tile_dims=(grid["tile_w"], grid["tile_h"]),
            base_channels=run["base_channels"],
            base_channels_2d=run["base_channels_2d"], levels=run["levels"],
            parent_weight=run["parent_weight"], child_weight=run["child_weight"],
            epochs_2d=run["epochs_2d"], augment_2d=run["augment_2d"])
    except (TrainError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _synth_config(cfg: dict, seed: int) -> SynthConfig:
    s = cfg["synth"]
    return SynthConfig(
        extent_xy=s["extent_xy"], pylon_spacing=s["pylon_spacing"],
        pylon_height=s["pylon_height"],
        corridor_half_width=s["corridor_half_width"],
        catenary_sag=s["catenary_sag"],
        vegetation_density=s["vegetation_density"],
        ground_density=s["ground_density"], rng_seed=seed)


def _read_scenes(paths) -> list:
    scenes = []
    for p in paths:
        fmt = "bin" if str(p).endswith(".bin") else "csv"
        scenes.append(read_points(p, format=fmt))
    return scenes


def _bounds_dict(bounds) -> dict:
    return {"min": list(bounds.min), "max": list(bounds.max)}


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args, cfg: dict) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base_seed = cfg["run"]["seed"] if args.seed is None else args.seed
    fmt = cfg["synth"]["format"]
    if fmt not in ("csv", "bin"):
        raise ConfigError(f"synth.format must be csv or bin, got {fmt!r}")
    manifest = {"base_seed": base_seed, "format": fmt,
                "synth": cfg["synth"], "scenes": []}
    for i in range(cfg["synth"]["num_scenes"]):
        seed = base_seed + i
        scene = generate_synthetic_scene(_synth_config(cfg, seed))
        name = f"scene_{i:03d}.{fmt}"
        write_points(scene, out_dir / name, format=fmt)
        manifest["scenes"].append({
            "file": name, "seed": seed, "num_points": len(scene),
            "bounds": _bounds_dict(scene.bounds)})
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    print(f"wrote {cfg['synth']['num_scenes']} scenes to {out_dir}")
    return EXIT_OK


def cmd_voxelize(args, cfg: dict) -> int:
    run = build_run_config(cfg, args.seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for path, scene in zip(args.scenes, _read_scenes(args.scenes)):
        z_max = float(scene.xyz[:, 2].max())
        prepared = train_eval.prepare_scene(scene, run, z_max)
        out = out_dir / (Path(path).stem + ".sunvg")
        write_voxel_grid(prepared.grid, out)
        print(f"{out}: dims {prepared.grid.dims}, "
              f"{int(prepared.grid.occupancy.sum())} points binned, "
              f"{prepared.grid.num_dropped} dropped")
    return EXIT_OK


def cmd_train2d(args, cfg: dict) -> int:
    run = build_run_config(cfg, args.seed)
    scenes = _read_scenes(args.scenes)
    from .bev2d import pretrain_2d
    from .projection import project_bev
    from .elevation import dataset_max_elevation

    dataset = []
    for scene in scenes:
        bev = project_bev(scene, scene.bounds.min[:2], run.grid_dims[:2],
                          run.voxel_size)
        dataset.append((bev.features, bev.region_labels))
    model, log = pretrain_2d(dataset, run.bev_config(), epochs=run.epochs_2d,
                             augment=run.augment_2d, seed=run.seed, lr=run.lr)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out, model.store.state_dict(),
                    z_max_global=dataset_max_elevation(scenes),
                    cfg_hash=model.config_hash())
    Path(str(out) + ".log").write_text("\n".join(log) + "\n")
    print(f"saved 2D checkpoint to {out} ({len(log)} epochs)")
    return EXIT_OK


def _load_bev(path, run: RunConfig) -> tuple[Bev2D, float]:
    ckpt = load_checkpoint(path)
    model = Bev2D(run.bev_config(), rng=np.random.default_rng(run.seed))
    if ckpt.cfg_hash != model.config_hash():
        raise ArtifactError(f"{path}: 2D checkpoint config hash mismatch")
    model.store.load_state_dict(ckpt.state)
    return model, ckpt.z_max_global


def cmd_train3d(args, cfg: dict) -> int:
    run = build_run_config(cfg, args.seed)
    if run.loss == "hlc" and not args.bev_checkpoint:
        raise ConfigError("train3d with loss=hlc requires --bev-checkpoint "
                          "(pretrain one with `sunet train2d`)")
    scenes = _read_scenes(args.scenes)
    train_scenes, val_scenes = train_eval.validation_split(scenes)
    bev_model = None
    if run.loss == "hlc":
        bev_model, _ = _load_bev(args.bev_checkpoint, run)
    result = train_eval.train(run, train_scenes, val_scenes, bev_model=bev_model)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    model = result.model
    model.store.load_state_dict(result.best_state)
    save_checkpoint(out, model.store.state_dict(),
                    z_max_global=result.z_max_global,
                    cfg_hash=model.config_hash())
    Path(str(out) + ".log").write_text("\n".join(result.log) + "\n")
    print(f"saved 3D checkpoint to {out} "
          f"(best val macro-F1 {100 * result.best_val_f1:.2f}%)")
    return EXIT_OK


def _load_3d(path, run: RunConfig):
    ckpt = load_checkpoint(path)
    model = train_eval.SUNet3D(run.model_config(),
                               rng=np.random.default_rng(run.seed))
    if ckpt.cfg_hash != model.config_hash():
        raise ArtifactError(f"{path}: checkpoint config hash mismatch "
                            "(was it trained with this config?)")
    model.store.load_state_dict(ckpt.state)
    return model, ckpt.z_max_global


def cmd_infer(args, cfg: dict) -> int:
    run = build_run_config(cfg, args.seed)
    model, z_max_global = _load_3d(args.checkpoint, run)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for path, scene in zip(args.scenes, _read_scenes(args.scenes)):
        labels = train_eval.infer(model, run, scene, z_max_global)
        out = out_dir / (Path(path).stem + "_labeled.csv")
        with open(out, "w", newline="\n") as fh:
            for i in range(len(scene)):
                x, y, z = (float(v) for v in scene.xyz[i])
                fh.write(f"{x!r},{y!r},{z!r},{scene.num_returns[i]},"
                         f"{scene.class_labels[i]},{scene.region_labels[i]},"
                         f"{labels[i]}\n")
        print(f"{out}: {len(scene)} points labeled")
    return EXIT_OK


def read_labeled(path) -> tuple[np.ndarray, np.ndarray]:
    """Ground-truth and predicted class columns of a labeled CSV."""
    gt, pred = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 7:
                raise FormatError(f"{path}, line {lineno}: expected 7 fields")
            gt.append(int(parts[4]))
            pred.append(int(parts[6]))
    if not gt:
        raise FormatError(f"{path}: empty labeled file")
    return np.array(gt), np.array(pred)


def cmd_eval(args, cfg: dict) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    gt_all, pred_all = [], []
    for path in args.labeled:
        gt, pred = read_labeled(path)
        gt_all.append(gt)
        pred_all.append(pred)
    report = evaluate(np.concatenate(pred_all), np.concatenate(gt_all))
    (out_dir / "metrics.csv").write_text(report.to_csv())
    (out_dir / "metrics.txt").write_text(report.to_text() + "\n")
    print(report.to_text())
    return EXIT_OK


def cmd_ablate(args, cfg: dict) -> int:
    run = build_run_config(cfg, args.seed)
    scenes = _read_scenes(args.scenes)
    table = train_eval.run_ablation(default_ablation_grid(run), scenes)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "ablation.csv").write_text(table.to_csv())
    (out_dir / "ablation.txt").write_text(table.to_text() + "\n")
    print(table.to_text())
    return EXIT_OK


def cmd_render(args, cfg: dict) -> int:
    grid = cfg["grid"]
    fmt = "bin" if str(args.scene).endswith(".bin") else "csv"
    labels = None
    if args.predicted:
        gt, pred = read_labeled(args.scene)
        labels = pred
        scene = _read_labeled_scene(args.scene)
    else:
        scene = read_points(args.scene, format=fmt)
    view = render_bev_or_side(scene, args.view, labels, grid["voxel_size"])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    render.write_ppm(out, view)
    print(f"wrote {args.view} view to {out}")
    return EXIT_OK


def _read_labeled_scene(path):
    """Labeled CSVs are scene CSVs with a trailing prediction column."""
    from .pointcloud_io import Scene

    xyz, nr, cls, reg = [], [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 7:
                raise FormatError(f"{path}, line {lineno}: expected 7 fields")
            xyz.append((float(parts[0]), float(parts[1]), float(parts[2])))
            nr.append(int(parts[3]))
            cls.append(int(parts[4]))
            reg.append(int(parts[5]))
    return Scene(np.array(xyz), np.array(nr), np.array(cls), np.array(reg),
                 scene_id=Path(path).stem)


def render_bev_or_side(scene, view: str, labels, pixel_size: float):
    if view == "bev":
        return render.render_bev(scene, labels, pixel_size)
    return render.render_side(scene, labels, pixel_size)


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="INI config file")
    common.add_argument("--seed", type=int, default=None,
                        help="override the configured seed")
    common.add_argument("--out-dir", default="out", help="output directory")

    parser = argparse.ArgumentParser(
        prog="sunet",
        description="Utility-corridor LiDAR segmentation pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common],
                       help="generate synthetic corridor scenes")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("voxelize", parents=[common],
                       help="dump voxel grids for scenes")
    p.add_argument("scenes", nargs="+")
    p.set_defaults(func=cmd_voxelize)

    p = sub.add_parser("train2d", parents=[common],
                       help="pretrain the 2D regional network")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("scenes", nargs="+")
    p.set_defaults(func=cmd_train2d)

    p = sub.add_parser("train3d", parents=[common],
                       help="train the 3D segmentation network")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--bev-checkpoint", default=None,
                   help="pretrained 2D checkpoint (required for loss=hlc)")
    p.add_argument("scenes", nargs="+")
    p.set_defaults(func=cmd_train3d)

    p = sub.add_parser("infer", parents=[common],
                       help="label scenes with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("scenes", nargs="+")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", parents=[common],
                       help="score labeled CSVs against their ground truth")
    p.add_argument("labeled", nargs="+")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", parents=[common],
                       help="run the feature/loss/module ablation grid")
    p.add_argument("scenes", nargs="+")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("render", parents=[common],
                       help="render a scene to a PPM image")
    p.add_argument("--view", choices=("bev", "side"), default="bev")
    p.add_argument("--out", required=True)
    p.add_argument("--predicted", action="store_true",
                   help="color by the prediction column of a labeled CSV")
    p.add_argument("scene")
    p.set_defaults(func=cmd_render)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except (ConfigError,) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT
    except (FormatError, GenerationError, ProjectionError, TrainError,
            OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
