"""Utility-corridor LiDAR semantic segmentation.

Multi-resolution 3D voxel classification constrained by 2D bird's-eye-view
regional predictions through a hierarchical layout-consistency loss, with a
synthetic corridor-scene generator for end-to-end experiments.
"""

from . import (
    bev2d,
    cli,
    diffcore,
    elevation,
    fusion,
    pointcloud_io,
    projection,
    render,
    sunet3d,
    train_eval,
)

__version__ = "0.1.0"

__all__ = [
    "bev2d",
    "cli",
    "diffcore",
    "elevation",
    "fusion",
    "pointcloud_io",
    "projection",
    "render",
    "sunet3d",
    "train_eval",
    "__version__",
]
