"""Point record I/O, scene tiling, and synthetic corridor scene generation.

CSV format: header-free rows "x,y,z,num_returns,class,region" (LF endings).
BIN format: magic "SUNPC1", little-endian u64 point count, then per point
3 x f64 coordinates + 3 x u8 (num_returns, class, region).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

PC_MAGIC = b"SUNPC1"


class FormatError(ValueError):
    """Malformed point cloud file or record."""


class GenerationError(ValueError):
    """Synthetic scene configuration cannot be realized."""


class ObjectClass(IntEnum):
    BACKGROUND = 0
    PYLON = 1
    POWERLINE = 2
    VEGETATION = 3
    GROUND = 4


class Region(IntEnum):
    NONE = 0
    CORRIDOR = 1
    NON_CORRIDOR = 2


CLASS_NAMES = ("background", "pylon", "powerline", "vegetation", "ground")
REGION_NAMES = ("none", "corridor", "non_corridor")
NUM_CLASSES = len(CLASS_NAMES)
NUM_REGIONS = len(REGION_NAMES)


@dataclass(frozen=True)
class PointRecord:
    """One LiDAR return."""

    x: float
    y: float
    z: float
    num_returns: int
    class_label: ObjectClass
    region_label: Region


@dataclass(frozen=True)
class Bounds:
    """Axis-aligned box in meters."""

    min: tuple[float, float, float]
    max: tuple[float, float, float]

    def contains(self, xyz: np.ndarray) -> np.ndarray:
        lo = np.asarray(self.min)
        hi = np.asarray(self.max)
        return np.all((xyz >= lo) & (xyz <= hi), axis=-1)


class Scene:
    """An ordered collection of point records; index is point identity.

    Stored as parallel arrays for vectorized processing; ``record(i)`` gives
    the per-point view.
    """

    def __init__(self, xyz: np.ndarray, num_returns: np.ndarray,
                 class_labels: np.ndarray, region_labels: np.ndarray,
                 scene_id: str, bounds: Bounds | None = None):
        self.xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        n = len(self.xyz)
        self.num_returns = np.asarray(num_returns, dtype=np.int64).reshape(n)
        self.class_labels = np.asarray(class_labels, dtype=np.int64).reshape(n)
        self.region_labels = np.asarray(region_labels, dtype=np.int64).reshape(n)
        self.scene_id = scene_id
        self.bounds = bounds if bounds is not None else self._tight_bounds()

    def _tight_bounds(self) -> Bounds:
        if len(self) == 0:
            return Bounds((0.0, 0.0, 0.0), (0.0, 0.0, 0.0))
        lo = self.xyz.min(axis=0)
        hi = self.xyz.max(axis=0)
        return Bounds(tuple(lo.tolist()), tuple(hi.tolist()))

    def __len__(self) -> int:
        return len(self.xyz)

    def record(self, i: int) -> PointRecord:
        return PointRecord(
            x=float(self.xyz[i, 0]), y=float(self.xyz[i, 1]), z=float(self.xyz[i, 2]),
            num_returns=int(self.num_returns[i]),
            class_label=ObjectClass(int(self.class_labels[i])),
            region_label=Region(int(self.region_labels[i])),
        )

    def __iter__(self):
        return (self.record(i) for i in range(len(self)))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Scene):
            return NotImplemented
        return (
            np.array_equal(self.xyz, other.xyz)
            and np.array_equal(self.num_returns, other.num_returns)
            and np.array_equal(self.class_labels, other.class_labels)
            and np.array_equal(self.region_labels, other.region_labels)
        )

    @classmethod
    def from_records(cls, records, scene_id: str = "scene") -> "Scene":
        records = list(records)
        xyz = np.array([(r.x, r.y, r.z) for r in records], dtype=np.float64)
        return cls(
            xyz.reshape(-1, 3),
            np.array([r.num_returns for r in records], dtype=np.int64),
            np.array([int(r.class_label) for r in records], dtype=np.int64),
            np.array([int(r.region_label) for r in records], dtype=np.int64),
            scene_id=scene_id,
        )


@dataclass(frozen=True)
class SynthConfig:
    """Geometry and density knobs for generated corridor scenes."""

    extent_xy: float = 16.0
    pylon_spacing: float = 7.0
    pylon_height: float = 20.0
    corridor_half_width: float = 5.0
    catenary_sag: float = 1.5
    vegetation_density: float = 2.0    # points per m^2
    ground_density: float = 3.0        # points per m^2
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("extent_xy", "pylon_spacing", "pylon_height",
                     "corridor_half_width", "catenary_sag"):
            if getattr(self, name) <= 0:
                raise GenerationError(f"{name} must be > 0")
        if self.vegetation_density < 0 or self.ground_density < 0:
            raise GenerationError("densities must be >= 0")


# ---------------------------------------------------------------------------
# file I/O


def _validate_labels(num_returns: np.ndarray, cls: np.ndarray, reg: np.ndarray,
                     path, lineno_of=None):
    def where(i):
        return f"{path}, line {lineno_of(i)}" if lineno_of else f"{path}, record {i}"

    for i in np.nonzero(num_returns < 1)[0][:1]:
        raise FormatError(f"{where(i)}: num_returns must be >= 1")
    for i in np.nonzero((cls < 0) | (cls >= NUM_CLASSES))[0][:1]:
        raise FormatError(f"{where(i)}: unknown class code {cls[i]}")
    for i in np.nonzero((reg < 0) | (reg >= NUM_REGIONS))[0][:1]:
        raise FormatError(f"{where(i)}: unknown region code {reg[i]}")


def read_points(path, format: str = "csv") -> Scene:
    """Read a scene; bounds are the tight AABB of the points."""
    if format == "csv":
        return _read_csv(path)
    if format == "bin":
        return _read_bin(path)
    raise FormatError(f"unknown format {format!r}")


def _read_csv(path) -> Scene:
    xyz, nr, cls, reg = [], [], [], []
    with open(path, "r", encoding="ascii", newline="") as fh:
        lineno = 0
        for line in fh:
            lineno += 1
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 6:
                raise FormatError(f"{path}, line {lineno}: expected 6 fields, got {len(parts)}")
            try:
                x, y, z = float(parts[0]), float(parts[1]), float(parts[2])
                n, c, r = int(parts[3]), int(parts[4]), int(parts[5])
            except ValueError as exc:
                raise FormatError(f"{path}, line {lineno}: {exc}") from None
            if not (np.isfinite(x) and np.isfinite(y) and np.isfinite(z)):
                raise FormatError(f"{path}, line {lineno}: non-finite coordinate")
            if n < 1:
                raise FormatError(f"{path}, line {lineno}: num_returns must be >= 1")
            if not 0 <= c < NUM_CLASSES:
                raise FormatError(f"{path}, line {lineno}: unknown class code {c}")
            if not 0 <= r < NUM_REGIONS:
                raise FormatError(f"{path}, line {lineno}: unknown region code {r}")
            xyz.append((x, y, z))
            nr.append(n)
            cls.append(c)
            reg.append(r)
    if not xyz:
        raise FormatError(f"{path}: empty scene")
    return Scene(np.array(xyz), np.array(nr), np.array(cls), np.array(reg),
                 scene_id=_stem(path))


def _read_bin(path) -> Scene:
    with open(path, "rb") as fh:
        magic = fh.read(len(PC_MAGIC))
        if magic != PC_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        raw = fh.read(8)
        if len(raw) != 8:
            raise FormatError(f"{path}: truncated header")
        (count,) = struct.unpack("<Q", raw)
        if count == 0:
            raise FormatError(f"{path}: empty scene")
        rec = np.dtype([("xyz", "<f8", 3), ("nr", "u1"), ("cls", "u1"), ("reg", "u1")])
        data = fh.read(rec.itemsize * count)
        if len(data) != rec.itemsize * count:
            raise FormatError(f"{path}: truncated point data")
        arr = np.frombuffer(data, dtype=rec)
    xyz = arr["xyz"].astype(np.float64)
    if not np.all(np.isfinite(xyz)):
        raise FormatError(f"{path}: non-finite coordinate")
    nr = arr["nr"].astype(np.int64)
    cls = arr["cls"].astype(np.int64)
    reg = arr["reg"].astype(np.int64)
    _validate_labels(nr, cls, reg, path)
    return Scene(xyz, nr, cls, reg, scene_id=_stem(path))


def _stem(path) -> str:
    name = str(path).replace("\\", "/").rsplit("/", 1)[-1]
    return name.rsplit(".", 1)[0]


def write_points(scene: Scene, path, format: str = "csv"):
    """Write a scene so that read_points returns an equal scene."""
    if len(scene) == 0:
        raise FormatError("refusing to write an empty scene")
    if format == "csv":
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            for i in range(len(scene)):
                x, y, z = (float(v) for v in scene.xyz[i])
                fh.write(f"{x!r},{y!r},{z!r},{scene.num_returns[i]},"
                         f"{scene.class_labels[i]},{scene.region_labels[i]}\n")
    elif format == "bin":
        if scene.num_returns.max() > 255:
            raise FormatError("bin format stores num_returns as u8 (max 255)")
        rec = np.dtype([("xyz", "<f8", 3), ("nr", "u1"), ("cls", "u1"), ("reg", "u1")])
        arr = np.empty(len(scene), dtype=rec)
        arr["xyz"] = scene.xyz
        arr["nr"] = scene.num_returns
        arr["cls"] = scene.class_labels
        arr["reg"] = scene.region_labels
        with open(path, "wb") as fh:
            fh.write(PC_MAGIC)
            fh.write(struct.pack("<Q", len(scene)))
            fh.write(arr.tobytes())
    else:
        raise FormatError(f"unknown format {format!r}")


# ---------------------------------------------------------------------------
# synthetic corridor scenes


def _terrain(rng: np.random.Generator, extent: float):
    """Smooth undulating ground surface z(x, y), non-negative."""
    amps = rng.uniform(0.3, 1.0, size=2)
    wavelengths = rng.uniform(extent * 0.6, extent * 1.8, size=4)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=4)

    def z(x, y):
        return (
            amps.sum()
            + amps[0] * np.sin(2 * np.pi * x / wavelengths[0] + phases[0])
            * np.sin(2 * np.pi * y / wavelengths[1] + phases[1])
            + amps[1] * np.sin(2 * np.pi * x / wavelengths[2] + phases[2])
            * np.cos(2 * np.pi * y / wavelengths[3] + phases[3])
        )

    return z


def generate_synthetic_scene(cfg: SynthConfig) -> Scene:
    """Deterministic corridor scene: undulating ground, pylons along x at
    fixed spacing, sagging conductors between pylon tops, vegetation clusters,
    and a sprinkle of background noise returns.

    Region ground truth is geometric: corridor within corridor_half_width of
    the powerline centerline (y = extent/2), non_corridor elsewhere.
    """
    rng = np.random.default_rng(cfg.rng_seed)
    extent = cfg.extent_xy
    area = extent * extent
    y_center = extent / 2.0
    ground_z = _terrain(rng, extent)

    margin = cfg.pylon_spacing / 2.0
    pylon_x = np.arange(margin, extent - margin + 1e-9, cfg.pylon_spacing)
    if len(pylon_x) < 2:
        raise GenerationError(
            f"extent {extent} too small to place two pylons at spacing {cfg.pylon_spacing}")

    xs, ys, zs, nrs, cls = [], [], [], [], []

    def emit(x, y, z, nr, label):
        xs.append(np.asarray(x, dtype=np.float64))
        ys.append(np.asarray(y, dtype=np.float64))
        zs.append(np.asarray(z, dtype=np.float64))
        nrs.append(np.asarray(nr, dtype=np.int64))
        cls.append(np.full(len(xs[-1]), int(label), dtype=np.int64))

    # ground
    n_ground = int(round(cfg.ground_density * area))
    if n_ground > 0:
        gx = rng.uniform(0.0, extent, n_ground)
        gy = rng.uniform(0.0, extent, n_ground)
        gz = ground_z(gx, gy) + rng.normal(0.0, 0.05, n_ground)
        emit(gx, gy, gz, rng.choice([1, 2], size=n_ground, p=[0.7, 0.3]),
             ObjectClass.GROUND)

    # pylons: tapered lattice masts with a crossarm at the top
    arm = min(2.0, 0.8 * cfg.corridor_half_width)
    lateral = min(0.4, 0.3 * cfg.corridor_half_width)
    top_z = np.empty(len(pylon_x))
    for k, px in enumerate(pylon_x):
        base = float(ground_z(px, y_center))
        top_z[k] = base + cfg.pylon_height
        n_shaft = max(12, int(cfg.pylon_height * 6))
        t = rng.uniform(0.0, 1.0, n_shaft)
        radius = lateral * (1.0 - 0.7 * t)
        ang = rng.uniform(0.0, 2.0 * np.pi, n_shaft)
        sx = px + radius * np.cos(ang)
        sy = y_center + radius * np.sin(ang)
        sz = base + t * cfg.pylon_height
        n_arm = max(6, int(arm * 6))
        ax = px + rng.normal(0.0, 0.05, n_arm)
        ay = y_center + rng.uniform(-arm, arm, n_arm)
        az = top_z[k] + rng.normal(0.0, 0.05, n_arm)
        px_all = np.concatenate([sx, ax])
        py_all = np.concatenate([sy, ay])
        pz_all = np.concatenate([sz, az])
        py_all = np.clip(py_all, y_center - 0.95 * cfg.corridor_half_width,
                         y_center + 0.95 * cfg.corridor_half_width)
        emit(px_all, py_all, pz_all,
             rng.choice([1, 2], size=len(px_all), p=[0.8, 0.2]), ObjectClass.PYLON)

    # powerlines: parabolic spans between consecutive pylon tops,
    # sag = catenary_sag at midspan, three conductors across the crossarm
    offsets = (-0.8 * arm, 0.0, 0.8 * arm)
    for k in range(len(pylon_x) - 1):
        x0, x1 = pylon_x[k], pylon_x[k + 1]
        z0, z1 = top_z[k], top_z[k + 1]
        span = x1 - x0
        n_pts = max(8, int(span * 2))
        for dy in offsets:
            t = rng.uniform(0.0, 1.0, n_pts)
            wx = x0 + t * span
            wz = (1 - t) * z0 + t * z1 - 4.0 * cfg.catenary_sag * t * (1 - t)
            wy = y_center + dy + rng.normal(0.0, 0.02, n_pts)
            wy = np.clip(wy, y_center - 0.95 * cfg.corridor_half_width,
                         y_center + 0.95 * cfg.corridor_half_width)
            wz = wz + rng.normal(0.0, 0.02, n_pts)
            emit(wx, wy, wz, np.ones(n_pts, dtype=np.int64), ObjectClass.POWERLINE)

    # vegetation: gaussian canopy clusters, inside and outside the corridor
    n_veg = int(round(cfg.vegetation_density * area))
    if n_veg > 0:
        n_clusters = max(1, n_veg // 80)
        centers = rng.uniform(0.0, extent, size=(n_clusters, 2))
        sigma = rng.uniform(1.0, 3.0, n_clusters)
        crown = rng.uniform(2.0, max(2.5, min(12.0, 0.8 * cfg.pylon_height)), n_clusters)
        which = rng.integers(0, n_clusters, n_veg)
        vx = centers[which, 0] + rng.normal(0.0, sigma[which])
        vy = centers[which, 1] + rng.normal(0.0, sigma[which])
        inside = np.nextafter(extent, 0.0)  # keep off the half-open boundary
        vx = np.clip(vx, 0.0, inside)
        vy = np.clip(vy, 0.0, inside)
        vz = ground_z(vx, vy) + rng.uniform(0.3, 1.0, n_veg) * crown[which]
        emit(vx, vy, vz,
             rng.choice([1, 2, 3, 4], size=n_veg, p=[0.15, 0.3, 0.3, 0.25]),
             ObjectClass.VEGETATION)

    # sparse air returns so the background class exists in ground truth
    n_noise = max(2, int(round(0.001 * area)))
    bx = rng.uniform(0.0, extent, n_noise)
    by = rng.uniform(0.0, extent, n_noise)
    bz = rng.uniform(0.0, cfg.pylon_height * 1.2, n_noise)
    emit(bx, by, bz, np.ones(n_noise, dtype=np.int64), ObjectClass.BACKGROUND)

    x = np.concatenate(xs)
    y = np.concatenate(ys)
    z = np.concatenate(zs)
    nr = np.concatenate(nrs)
    labels = np.concatenate(cls)
    regions = np.where(np.abs(y - y_center) <= cfg.corridor_half_width,
                       int(Region.CORRIDOR), int(Region.NON_CORRIDOR))
    return Scene(np.stack([x, y, z], axis=1), nr, labels, regions,
                 scene_id=f"synth-{cfg.rng_seed}")


def split_scene(scene: Scene, tile_xy: float) -> list[Scene]:
    """Partition a scene into square XY tiles anchored at the bounds minimum.

    Every point lands in exactly one tile; empty tiles are dropped.
    """
    if tile_xy <= 0:
        raise ValueError("tile_xy must be > 0")
    if len(scene) == 0:
        return []
    x0, y0, _ = scene.bounds.min
    ix = np.floor((scene.xyz[:, 0] - x0) / tile_xy).astype(np.int64)
    iy = np.floor((scene.xyz[:, 1] - y0) / tile_xy).astype(np.int64)
    tiles = []
    zlo, zhi = scene.bounds.min[2], scene.bounds.max[2]
    for key in sorted(set(zip(ix.tolist(), iy.tolist()))):
        mask = (ix == key[0]) & (iy == key[1])
        bounds = Bounds(
            (x0 + key[0] * tile_xy, y0 + key[1] * tile_xy, zlo),
            (x0 + (key[0] + 1) * tile_xy, y0 + (key[1] + 1) * tile_xy, zhi),
        )
        tiles.append(Scene(
            scene.xyz[mask], scene.num_returns[mask], scene.class_labels[mask],
            scene.region_labels[mask],
            scene_id=f"{scene.scene_id}_t{key[0]}_{key[1]}", bounds=bounds,
        ))
    return tiles
