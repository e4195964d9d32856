"""Class-colored raster rendering of scenes to portable pixmaps (PPM).

BEV view: top-down composite where each pixel takes the class color of its
highest point. Side view: x-z orthographic projection, nearest point (lowest
y) wins. Both are byte-deterministic for a fixed input.
"""

from __future__ import annotations

import numpy as np

from .pointcloud_io import ObjectClass, Scene

# pylon blue, powerline red, vegetation green, ground dark green, background gray
PALETTE = {
    int(ObjectClass.BACKGROUND): (128, 128, 128),
    int(ObjectClass.PYLON): (0, 0, 255),
    int(ObjectClass.POWERLINE): (255, 0, 0),
    int(ObjectClass.VEGETATION): (0, 200, 0),
    int(ObjectClass.GROUND): (0, 100, 0),
}
EMPTY_COLOR = (255, 255, 255)


def write_ppm(path, image: np.ndarray):
    """Write an (H, W, 3) uint8 array as a binary P6 pixmap."""
    image = np.ascontiguousarray(image, dtype=np.uint8)
    h, w, _ = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(image.tobytes())


def _colorize(cell_class: np.ndarray, filled: np.ndarray) -> np.ndarray:
    lut = np.array([PALETTE[c] for c in range(len(PALETTE))], dtype=np.uint8)
    img = np.full(cell_class.shape + (3,), EMPTY_COLOR, dtype=np.uint8)
    img[filled] = lut[cell_class[filled]]
    return img


def render_bev(scene: Scene, labels: np.ndarray | None = None,
               pixel_size: float = 1.0) -> np.ndarray:
    """Top-down image; row 0 is the maximum-y edge (north up)."""
    labels = scene.class_labels if labels is None else np.asarray(labels)
    x0, y0, _ = scene.bounds.min
    ix = np.floor((scene.xyz[:, 0] - x0) / pixel_size).astype(np.int64)
    iy = np.floor((scene.xyz[:, 1] - y0) / pixel_size).astype(np.int64)
    w = int(ix.max()) + 1
    h = int(iy.max()) + 1
    cell = np.zeros((w, h), dtype=np.int64)
    filled = np.zeros((w, h), dtype=bool)
    order = np.argsort(scene.xyz[:, 2], kind="stable")  # highest point last
    cell[ix[order], iy[order]] = labels[order]
    filled[ix[order], iy[order]] = True
    return _colorize(cell.T[::-1], filled.T[::-1])


def render_side(scene: Scene, labels: np.ndarray | None = None,
                pixel_size: float = 1.0) -> np.ndarray:
    """x-z orthographic view from negative y; row 0 is the top (max z)."""
    labels = scene.class_labels if labels is None else np.asarray(labels)
    x0, _, z0 = scene.bounds.min
    ix = np.floor((scene.xyz[:, 0] - x0) / pixel_size).astype(np.int64)
    iz = np.floor((scene.xyz[:, 2] - z0) / pixel_size).astype(np.int64)
    w = int(ix.max()) + 1
    d = int(iz.max()) + 1
    cell = np.zeros((w, d), dtype=np.int64)
    filled = np.zeros((w, d), dtype=bool)
    order = np.argsort(-scene.xyz[:, 1], kind="stable")  # nearest point last
    cell[ix[order], iz[order]] = labels[order]
    filled[ix[order], iz[order]] = True
    return _colorize(cell.T[::-1], filled.T[::-1])
