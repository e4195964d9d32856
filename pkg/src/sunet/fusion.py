"""Loss-based late fusion: depth-broadcast calibration of 2D regional logits
and the hierarchical layout-consistency loss.

The joint likelihood of (object class c, parent region p) at a voxel is the
product of the 3D class probability and the calibrated 2D region probability;
the loss is its negative log scaled by the co-occurrence weights w_p * w_c,
averaged over occupied voxels. Background voxels carry no parent region and
contribute a plain cross-entropy term instead, so the background class stays
trainable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffcore import Tensor, ops
from .pointcloud_io import NUM_CLASSES, NUM_REGIONS, ObjectClass, Region

FOREGROUND_CLASSES = (ObjectClass.PYLON, ObjectClass.POWERLINE,
                      ObjectClass.VEGETATION, ObjectClass.GROUND)
PARENT_REGIONS = (Region.CORRIDOR, Region.NON_CORRIDOR)

DEFAULT_ALLOWED = frozenset(
    {(Region.CORRIDOR, c) for c in FOREGROUND_CLASSES}
    | {(Region.NON_CORRIDOR, ObjectClass.VEGETATION),
       (Region.NON_CORRIDOR, ObjectClass.GROUND)}
)


class FusionError(ValueError):
    """Inconsistent ground truth or shapes in the fusion stage."""


@dataclass(frozen=True)
class HierarchyTable:
    """Parent(region) -> child(object class) co-occurrence with penalty weights.

    Scalar weights apply uniformly; per-parent / per-child vectors may
    override them.
    """

    parent_weight: float = 10.0
    child_weight: float = 8.0
    parent_weights: tuple[float, float] | None = None   # (corridor, non_corridor)
    child_weights: tuple[float, float, float, float] | None = None  # fg classes
    allowed: frozenset = field(default=DEFAULT_ALLOWED)

    def __post_init__(self):
        if self.parent_weight <= 0 or self.child_weight <= 0:
            raise FusionError("co-occurrence weights must be > 0")
        for p in (Region.CORRIDOR,):
            if (p, ObjectClass.PYLON) not in self.allowed \
                    or (p, ObjectClass.POWERLINE) not in self.allowed:
                raise FusionError("pylon/powerline must be allowed in the corridor")
        if (Region.NON_CORRIDOR, ObjectClass.PYLON) in self.allowed \
                or (Region.NON_CORRIDOR, ObjectClass.POWERLINE) in self.allowed:
            raise FusionError("pylon/powerline are corridor-exclusive")

    def is_allowed(self, region: Region, cls: ObjectClass) -> bool:
        return (region, cls) in self.allowed

    def parent_weight_of(self, region_codes: np.ndarray) -> np.ndarray:
        table = np.zeros(NUM_REGIONS)
        if self.parent_weights is not None:
            table[int(Region.CORRIDOR)] = self.parent_weights[0]
            table[int(Region.NON_CORRIDOR)] = self.parent_weights[1]
        else:
            table[int(Region.CORRIDOR)] = self.parent_weight
            table[int(Region.NON_CORRIDOR)] = self.parent_weight
        return table[region_codes]

    def child_weight_of(self, class_codes: np.ndarray) -> np.ndarray:
        table = np.zeros(NUM_CLASSES)
        if self.child_weights is not None:
            for cls, w in zip(FOREGROUND_CLASSES, self.child_weights):
                table[int(cls)] = w
        else:
            for cls in FOREGROUND_CLASSES:
                table[int(cls)] = self.child_weight
        return table[class_codes]

    def to_dict(self) -> dict:
        return {
            "parent_weight": self.parent_weight,
            "child_weight": self.child_weight,
            "parent_weights": list(self.parent_weights) if self.parent_weights else None,
            "child_weights": list(self.child_weights) if self.child_weights else None,
        }


@dataclass
class CalibratedLogits:
    """2D regional logits broadcast down voxel columns: (W, H, D, C_p)."""

    region_logits_3d: Tensor


def calibrate_logits(bev_logits, depth: int) -> CalibratedLogits:
    """Copy each pixel's logits to every voxel of its column (one-to-many)."""
    if depth < 1:
        raise FusionError("depth must be >= 1")
    t = bev_logits if isinstance(bev_logits, Tensor) else Tensor(np.asarray(bev_logits))
    if t.values.ndim != 3:
        raise FusionError(f"expected (W, H, C_p) logits, got shape {t.shape}")
    return CalibratedLogits(ops.repeat_new_axis(t, depth, axis=2))


def hlc_loss(obj_logits: Tensor, region_logits_3d: CalibratedLogits | Tensor,
             gt_class: np.ndarray, gt_region: np.ndarray,
             occupied: np.ndarray, table: HierarchyTable) -> Tensor:
    """Hierarchical layout-consistency loss over occupied voxels.

    For a voxel with ground-truth child c and parent p the contribution is
    -w_p * w_c * log(p3d_c * p2d_p); background voxels contribute -log p3d_bg.
    Differentiable to both logit tensors.
    """
    region_t = (region_logits_3d.region_logits_3d
                if isinstance(region_logits_3d, CalibratedLogits)
                else region_logits_3d)
    obj = obj_logits if isinstance(obj_logits, Tensor) else Tensor(np.asarray(obj_logits))
    spatial = obj.shape[:-1]
    if obj.shape[-1] != NUM_CLASSES:
        raise FusionError(f"object logits must have {NUM_CLASSES} channels")
    if region_t.shape[:-1] != spatial or region_t.shape[-1] != NUM_REGIONS:
        raise FusionError(
            f"region logits shape {region_t.shape} does not align with {spatial}")
    gt_class = np.asarray(gt_class)
    gt_region = np.asarray(gt_region)
    occupied = np.asarray(occupied, dtype=bool)
    if gt_class.shape != spatial or gt_region.shape != spatial or occupied.shape != spatial:
        raise FusionError("label grids must match the logits' spatial shape")

    m = int(occupied.sum())
    if m == 0:
        raise FusionError("no occupied voxels")
    fg = occupied & (gt_class != int(ObjectClass.BACKGROUND))
    bad = fg & ~np.isin(gt_region, [int(r) for r in PARENT_REGIONS])
    if bad.any():
        raise FusionError(f"{int(bad.sum())} occupied voxels have undefined "
                          "ground-truth region")
    bg = occupied & ~fg

    weights = table.parent_weight_of(gt_region) * table.child_weight_of(gt_class)
    sel_obj = np.zeros(spatial + (NUM_CLASSES,))
    sel_reg = np.zeros(spatial + (NUM_REGIONS,))
    np.put_along_axis(sel_obj, gt_class[..., None],
                      np.where(fg, weights, 0.0)[..., None], axis=-1)
    np.put_along_axis(sel_reg, gt_region[..., None],
                      np.where(fg, weights, 0.0)[..., None], axis=-1)
    sel_obj[..., int(ObjectClass.BACKGROUND)] += bg.astype(np.float64)

    ls_obj = ops.log_softmax(obj, axis=-1)
    ls_reg = ops.log_softmax(region_t, axis=-1)
    total = ops.tensor_sum(ops.mul(ls_obj, sel_obj)) + ops.tensor_sum(ops.mul(ls_reg, sel_reg))
    return ops.mul(total, -1.0 / m)


def wce_loss(obj_logits: Tensor, gt_class: np.ndarray,
             class_weights, occupied: np.ndarray) -> Tensor:
    """Class-weighted cross-entropy averaged over occupied voxels."""
    obj = obj_logits if isinstance(obj_logits, Tensor) else Tensor(np.asarray(obj_logits))
    spatial = obj.shape[:-1]
    gt_class = np.asarray(gt_class)
    occupied = np.asarray(occupied, dtype=bool)
    class_weights = np.asarray(class_weights, dtype=np.float64)
    if class_weights.shape != (NUM_CLASSES,):
        raise FusionError(f"class_weights must have shape ({NUM_CLASSES},)")
    if (class_weights <= 0).any():
        raise FusionError("class weights must be positive")
    if gt_class.shape != spatial or occupied.shape != spatial:
        raise FusionError("label grid must match the logits' spatial shape")
    m = int(occupied.sum())
    if m == 0:
        raise FusionError("no occupied voxels")
    sel = np.zeros(spatial + (NUM_CLASSES,))
    np.put_along_axis(sel, gt_class[..., None],
                      np.where(occupied, class_weights[gt_class], 0.0)[..., None],
                      axis=-1)
    ls = ops.log_softmax(obj, axis=-1)
    return ops.mul(ops.tensor_sum(ops.mul(ls, sel)), -1.0 / m)


def balanced_class_weights(labels: np.ndarray, num_classes: int = NUM_CLASSES,
                           mask: np.ndarray | None = None) -> np.ndarray:
    """Inverse-frequency weights (absent classes get 1), scaled so the mean
    weight over samples is 1."""
    labels = np.asarray(labels).reshape(-1)
    if mask is not None:
        labels = labels[np.asarray(mask, dtype=bool).reshape(-1)]
    counts = np.bincount(labels, minlength=num_classes)
    present = counts > 0
    weights = np.ones(num_classes)
    weights[present] = counts[present].sum() / (present.sum() * counts[present])
    return weights
