"""Loss-based late fusion: what the hierarchical layout-consistency loss does.

The 2D network's regional logits are broadcast down each voxel column
(one pixel -> one column). A voxel with ground-truth child class c and parent
region p is then scored on the joint likelihood p3d(c) * p2d(p), weighted by
the co-occurrence weights w_p * w_c. Getting the region wrong is punished as
hard as getting the class wrong; pylons outside corridors become expensive.
"""

import math

import numpy as np

from sunet.diffcore import Tensor
from sunet.fusion import HierarchyTable, calibrate_logits, hlc_loss, wce_loss
from sunet.pointcloud_io import ObjectClass, Region

table = HierarchyTable()  # w_p = 10, w_c = 8
print("co-occurrence table:")
for region in (Region.CORRIDOR, Region.NON_CORRIDOR):
    allowed = [c.name.lower() for c in ObjectClass
               if table.is_allowed(region, c)]
    print(f"  {region.name.lower():<13} -> {', '.join(allowed)}")

# broadcasting 2D logits down columns
bev_logits = np.array([[[2.0, 0.5, -1.0]]])  # one pixel, 3 region channels
calib = calibrate_logits(bev_logits, depth=4)
print(f"\ncalibrator: {bev_logits.shape} -> {calib.region_logits_3d.shape}, "
      "identical logits at every depth")

# the worked single-voxel case: uniform 3D (p=0.2), even 2D split (p=0.5)
gt_class = np.full((1, 1, 1), int(ObjectClass.GROUND))
gt_region = np.full((1, 1, 1), int(Region.CORRIDOR))
occupied = np.ones((1, 1, 1), bool)
obj = np.zeros((1, 1, 1, 5))
reg = np.zeros((1, 1, 1, 3))
reg[..., 0] = -1000.0  # no mass on the background region channel
loss = hlc_loss(Tensor(obj), Tensor(reg), gt_class, gt_region, occupied, table)
print(f"\nsingle-voxel uniform case: h = 0.2 * 0.5 = 0.1")
print(f"  loss = 10 * 8 * -ln(0.1) = {80 * -math.log(0.1):.4f}")
print(f"  computed                 = {loss.item():.4f}")

# the same voxel under plain weighted cross-entropy ignores the region
plain = wce_loss(Tensor(obj), gt_class, np.ones(5), occupied)
print(f"  weighted CE (unit weights) sees only the 3D term: ln 5 = "
      f"{plain.item():.4f}")

# consistency pressure: more 2D mass on the true region lowers the loss
print("\n2D confidence in the true region vs fused loss:")
for boost in (0.0, 1.0, 2.0, 4.0):
    reg_b = reg.copy()
    reg_b[..., int(Region.CORRIDOR)] += boost
    val = hlc_loss(Tensor(obj), Tensor(reg_b), gt_class, gt_region, occupied,
                   table).item()
    print(f"  corridor logit +{boost:>3.1f} -> loss {val:8.4f}")

# the pylon-outside-corridor mistake the weights are aimed at
gt_class[:] = int(ObjectClass.PYLON)
confident_wrong = reg.copy()
confident_wrong[..., int(Region.NON_CORRIDOR)] = 6.0  # 2D says non-corridor
val = hlc_loss(Tensor(obj), Tensor(confident_wrong), gt_class, gt_region,
               occupied, table).item()
print(f"\na pylon voxel whose column the 2D net calls non-corridor: "
      f"loss {val:.1f} (the 80x weight makes layout violations dominate)")
