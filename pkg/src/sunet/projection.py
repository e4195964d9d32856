"""Scene -> voxel grid / BEV grid conversion and label back-projection.

Voxels use half-open intervals [lo, hi) so boundary points bin uniquely.
Out-of-range points are dropped and counted, not an error. Voxel ground
truth is the majority class of member points with ties broken toward the
class that is rarer in the scene, which protects minority classes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .elevation import ElevationContext
from .pointcloud_io import NUM_CLASSES, NUM_REGIONS, ObjectClass, Region, Scene

VG_MAGIC = b"SUNVG1"

FEATURE_NAMES = ("occupancy", "abs_elev", "rel_elev", "num_returns")


class ProjectionError(ValueError):
    """Invalid grid geometry or all points out of range."""


def _majority(flat_idx: np.ndarray, values: np.ndarray, n_cells: int,
              n_codes: int) -> np.ndarray:
    """Per-cell majority vote; ties go to the code rarest in the whole input,
    then to the lowest code. Empty cells get code 0."""
    counts = np.bincount(flat_idx * n_codes + values,
                         minlength=n_cells * n_codes).reshape(n_cells, n_codes)
    totals = np.bincount(values, minlength=n_codes)
    order = np.lexsort((np.arange(n_codes), totals))  # rarest first
    winner_in_order = np.argmax(counts[:, order], axis=1)
    labels = order[winner_in_order]
    labels[counts.sum(axis=1) == 0] = 0
    return labels


@dataclass
class VoxelGrid:
    """Dense feature/label grid with per-point projection index."""

    dims: tuple[int, int, int]
    origin: tuple[float, float, float]
    voxel_size: float
    feature_spec: tuple[str, ...]
    features: np.ndarray          # (W, H, D, F)
    occupancy: np.ndarray         # (W, H, D) int
    labels: np.ndarray | None
    region_labels: np.ndarray | None
    point_voxel: np.ndarray       # (N,) flat voxel index per point, -1 if dropped
    num_dropped: int
    _order: np.ndarray = field(repr=False, default=None)
    _starts: np.ndarray = field(repr=False, default=None)

    def flat_index(self, i: int, j: int, d: int) -> int:
        w, h, dd = self.dims
        return (i * h + j) * dd + d

    def point_indices(self, i: int, j: int, d: int) -> np.ndarray:
        """Indices of the scene points inside voxel (i, j, d)."""
        f = self.flat_index(i, j, d)
        return self._order[self._starts[f]:self._starts[f + 1]]


@dataclass
class BevGrid:
    """2D XY projection; feature channels are (mean elevation, occupancy)."""

    dims: tuple[int, int]
    origin: tuple[float, float]
    pixel_size: float
    features: np.ndarray              # (W, H, 2)
    region_labels: np.ndarray | None  # (W, H)


def voxelize(scene: Scene, origin: tuple[float, float, float],
             dims: tuple[int, int, int], voxel_size: float,
             feature_spec=("occupancy",),
             elev_ctx: ElevationContext | None = None) -> VoxelGrid:
    """Bin points into voxels and aggregate per-voxel feature means.

    The occupancy channel holds raw counts; the elevation channels need an
    ElevationContext built on the same XY geometry. Empty voxels hold exact
    zeros in every channel.
    """
    w, h, d = (int(v) for v in dims)
    if w <= 0 or h <= 0 or d <= 0:
        raise ProjectionError(f"dims must be positive, got {dims}")
    if voxel_size <= 0:
        raise ProjectionError("voxel_size must be > 0")
    feature_spec = tuple(feature_spec)
    for name in feature_spec:
        if name not in FEATURE_NAMES:
            raise ProjectionError(f"unknown feature {name!r}")
    if any(n in ("abs_elev", "rel_elev") for n in feature_spec) and elev_ctx is None:
        raise ProjectionError("elevation features need an ElevationContext")

    idx = np.floor((scene.xyz - np.asarray(origin)) / voxel_size).astype(np.int64)
    inb = ((idx >= 0) & (idx < np.array([w, h, d]))).all(axis=1)
    num_dropped = int(len(scene) - inb.sum())
    if len(scene) > 0 and not inb.any():
        raise ProjectionError("all points out of range")

    n_cells = w * h * d
    flat_all = np.where(inb, (idx[:, 0] * h + idx[:, 1]) * d + idx[:, 2], -1)
    flat = flat_all[inb]
    occ = np.bincount(flat, minlength=n_cells)

    def cell_mean(per_point: np.ndarray) -> np.ndarray:
        sums = np.bincount(flat, weights=per_point, minlength=n_cells)
        return np.divide(sums, occ, out=np.zeros(n_cells), where=occ > 0)

    mean_z = cell_mean(scene.xyz[inb, 2])
    channels = []
    for name in feature_spec:
        if name == "occupancy":
            channels.append(occ.astype(np.float64))
        elif name == "num_returns":
            channels.append(cell_mean(scene.num_returns[inb].astype(np.float64)))
        elif name == "abs_elev":
            if elev_ctx.z_max_global == 0:
                raise ProjectionError("z_max_global must be nonzero")
            ae = 1.0 + mean_z / elev_ctx.z_max_global
            channels.append(np.where(occ > 0, ae, 0.0))
        elif name == "rel_elev":
            lo = np.repeat(elev_ctx.z_min_local.reshape(w * h), d)
            denom = elev_ctx.z_max_scene - lo
            re = np.divide(mean_z - lo, denom, out=np.zeros(n_cells),
                           where=denom != 0)
            channels.append(np.where(occ > 0, re, 0.0))
    features = np.stack(channels, axis=-1).reshape(w, h, d, len(feature_spec))

    labels = _majority(flat, scene.class_labels[inb], n_cells, NUM_CLASSES)
    regions = _majority(flat, scene.region_labels[inb], n_cells, NUM_REGIONS)

    order = np.argsort(flat, kind="stable")
    starts = np.zeros(n_cells + 1, dtype=np.int64)
    np.cumsum(occ, out=starts[1:])
    point_ids = np.nonzero(inb)[0][order]

    return VoxelGrid(
        dims=(w, h, d), origin=tuple(float(v) for v in origin),
        voxel_size=float(voxel_size), feature_spec=feature_spec,
        features=features, occupancy=occ.reshape(w, h, d),
        labels=labels.reshape(w, h, d), region_labels=regions.reshape(w, h, d),
        point_voxel=flat_all, num_dropped=num_dropped,
        _order=point_ids, _starts=starts,
    )


def project_bev(scene: Scene, origin: tuple[float, float],
                dims: tuple[int, int], pixel_size: float) -> BevGrid:
    """XY projection: per-pixel mean elevation and occupancy count, plus the
    majority region label (NONE on empty pixels)."""
    w, h = (int(v) for v in dims)
    if w <= 0 or h <= 0:
        raise ProjectionError(f"dims must be positive, got {dims}")
    if pixel_size <= 0:
        raise ProjectionError("pixel_size must be > 0")
    idx = np.floor((scene.xyz[:, :2] - np.asarray(origin)) / pixel_size).astype(np.int64)
    inb = ((idx >= 0) & (idx < np.array([w, h]))).all(axis=1)
    if len(scene) > 0 and not inb.any():
        raise ProjectionError("all points out of range")
    n_cells = w * h
    flat = idx[inb, 0] * h + idx[inb, 1]
    occ = np.bincount(flat, minlength=n_cells)
    zsum = np.bincount(flat, weights=scene.xyz[inb, 2], minlength=n_cells)
    mean_z = np.divide(zsum, occ, out=np.zeros(n_cells), where=occ > 0)
    features = np.stack([mean_z, occ.astype(np.float64)], axis=-1).reshape(w, h, 2)
    regions = _majority(flat, scene.region_labels[inb], n_cells, NUM_REGIONS)
    regions[occ == 0] = int(Region.NONE)
    return BevGrid(dims=(w, h), origin=(float(origin[0]), float(origin[1])),
                   pixel_size=float(pixel_size), features=features,
                   region_labels=regions.reshape(w, h))


def backproject_labels(grid: VoxelGrid, predicted: np.ndarray,
                       scene: Scene) -> np.ndarray:
    """Assign each point its containing voxel's predicted class; points that
    fell outside the grid get background."""
    predicted = np.asarray(predicted)
    if predicted.shape != grid.dims:
        raise ProjectionError(f"predicted shape {predicted.shape} != grid dims {grid.dims}")
    if len(grid.point_voxel) != len(scene):
        raise ProjectionError("grid was built from a different scene")
    flat = predicted.reshape(-1)
    out = np.full(len(scene), int(ObjectClass.BACKGROUND), dtype=np.int64)
    ok = grid.point_voxel >= 0
    out[ok] = flat[grid.point_voxel[ok]]
    return out


# ---------------------------------------------------------------------------
# optional binary dump: "SUNVG1", feature channels x-fastest


def write_voxel_grid(grid: VoxelGrid, path):
    w, h, d = grid.dims
    with open(path, "wb") as fh:
        fh.write(VG_MAGIC)
        fh.write(struct.pack("<I", 1))
        fh.write(struct.pack("<III", w, h, d))
        fh.write(struct.pack("<3d", *grid.origin))
        fh.write(struct.pack("<d", grid.voxel_size))
        fh.write(struct.pack("<I", len(grid.feature_spec)))
        for name in grid.feature_spec:
            raw = name.encode()
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
        for c in range(len(grid.feature_spec)):
            fh.write(grid.features[..., c].tobytes(order="F"))


def read_voxel_grid(path) -> VoxelGrid:
    with open(path, "rb") as fh:
        if fh.read(len(VG_MAGIC)) != VG_MAGIC:
            raise ProjectionError(f"{path}: not a SUNVG1 grid")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != 1:
            raise ProjectionError(f"{path}: unsupported version {version}")
        w, h, d = struct.unpack("<III", fh.read(12))
        origin = struct.unpack("<3d", fh.read(24))
        (voxel_size,) = struct.unpack("<d", fh.read(8))
        (n_feat,) = struct.unpack("<I", fh.read(4))
        names = []
        for _ in range(n_feat):
            (nlen,) = struct.unpack("<I", fh.read(4))
            names.append(fh.read(nlen).decode())
        channels = []
        for _ in range(n_feat):
            raw = fh.read(8 * w * h * d)
            if len(raw) != 8 * w * h * d:
                raise ProjectionError(f"{path}: truncated channel data")
            channels.append(np.frombuffer(raw, dtype="<f8").reshape((w, h, d), order="F"))
        features = np.stack(channels, axis=-1)
    occ = features[..., names.index("occupancy")].astype(np.int64) \
        if "occupancy" in names else np.zeros((w, h, d), dtype=np.int64)
    return VoxelGrid(
        dims=(w, h, d), origin=origin, voxel_size=voxel_size,
        feature_spec=tuple(names), features=features, occupancy=occ,
        labels=None, region_labels=None,
        point_voxel=np.empty(0, dtype=np.int64), num_dropped=0,
        _order=np.empty(0, dtype=np.int64),
        _starts=np.zeros(w * h * d + 1, dtype=np.int64),
    )
