"""Absolute (global) and relative (per-column) elevation features.

Absolute elevation maps z through 1 + z / z_max_global, so [0, z_max_global]
lands in [1, 2]. Relative elevation normalizes within a vertical pillar:
(z - column minimum) / (scene maximum - column minimum).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .pointcloud_io import Scene


class ElevationError(ValueError):
    """Degenerate elevation context (e.g. z_max_global = 0, empty input)."""


@dataclass
class ElevationContext:
    """Per-scene elevation statistics on a fixed XY column grid."""

    z_max_global: float
    z_max_scene: float
    z_min_local: np.ndarray   # (W, H); only meaningful where occupied
    occupied: np.ndarray      # (W, H) bool
    origin_xy: tuple[float, float]
    cell_size: float

    def column_of(self, x: float, y: float) -> tuple[int, int]:
        i = int(np.floor((x - self.origin_xy[0]) / self.cell_size))
        j = int(np.floor((y - self.origin_xy[1]) / self.cell_size))
        return i, j


def dataset_max_elevation(scenes: Iterable[Scene]) -> float:
    """Maximum z over a whole dataset; persisted with trained models."""
    zmax = None
    for scene in scenes:
        if len(scene) == 0:
            continue
        m = float(scene.xyz[:, 2].max())
        zmax = m if zmax is None else max(zmax, m)
    if zmax is None:
        raise ElevationError("no points in dataset")
    return zmax


def build_context(scene_or_tiles, origin_xy: tuple[float, float],
                  dims_xy: tuple[int, int], cell_size: float,
                  z_max_global: float | None = None) -> ElevationContext:
    """Column minima and scene maximum over one scene (or its tiles).

    ``z_max_global`` defaults to the scene maximum; pass the dataset-wide
    value for training pipelines.
    """
    scenes = [scene_or_tiles] if isinstance(scene_or_tiles, Scene) else list(scene_or_tiles)
    if not scenes or all(len(s) == 0 for s in scenes):
        raise ElevationError("empty input")
    w, h = dims_xy
    z_min = np.full((w, h), np.inf)
    z_max_scene = -np.inf
    for scene in scenes:
        if len(scene) == 0:
            continue
        z_max_scene = max(z_max_scene, float(scene.xyz[:, 2].max()))
        i = np.floor((scene.xyz[:, 0] - origin_xy[0]) / cell_size).astype(np.int64)
        j = np.floor((scene.xyz[:, 1] - origin_xy[1]) / cell_size).astype(np.int64)
        ok = (i >= 0) & (i < w) & (j >= 0) & (j < h)
        np.minimum.at(z_min, (i[ok], j[ok]), scene.xyz[ok, 2])
    occupied = np.isfinite(z_min)
    z_min = np.where(occupied, z_min, 0.0)
    zg = z_max_scene if z_max_global is None else float(z_max_global)
    return ElevationContext(z_max_global=zg, z_max_scene=z_max_scene,
                            z_min_local=z_min, occupied=occupied,
                            origin_xy=(float(origin_xy[0]), float(origin_xy[1])),
                            cell_size=float(cell_size))


def absolute_elevation(z, ctx: ElevationContext):
    """1 + z / z_max_global; accepts scalars or arrays."""
    if ctx.z_max_global == 0:
        raise ElevationError("z_max_global must be nonzero")
    return 1.0 + np.asarray(z, dtype=np.float64) / ctx.z_max_global


def relative_elevation(z, column: tuple[int, int], ctx: ElevationContext):
    """(z - column min) / (scene max - column min); 0 on a degenerate column."""
    i, j = column
    if not ctx.occupied[i, j]:
        raise ElevationError(f"column ({i}, {j}) has no points")
    lo = ctx.z_min_local[i, j]
    denom = ctx.z_max_scene - lo
    zv = np.asarray(z, dtype=np.float64)
    if denom == 0.0:
        return np.zeros_like(zv) if zv.ndim else 0.0
    return (zv - lo) / denom
