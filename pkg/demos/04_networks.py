"""The two networks: a 3D attention U-Net over voxels and its 2D twin over
the bird's-eye view.

Both share the same four-level ladder: each level halves space and doubles
channels; decoder levels gate their skip connections with additive attention.
The 3D head aggregates every decoder resolution (MFA) and can smooth the
class scores with a per-voxel MLP stack (FS).
"""

import numpy as np

from sunet.bev2d import Bev2D, Bev2DConfig
from sunet.diffcore import no_grad, ops
from sunet.sunet3d import SUNet3D, SUNet3DConfig

rng = np.random.default_rng(1)

cfg = SUNet3DConfig(tile_dims=(16, 16, 64), in_channels=4, base_channels=8,
                    use_mfa=True, use_fs=False)
model = SUNet3D(cfg, rng=0)
n_params = sum(p.tensor.size for p in model.store.trainable())
print(f"3D network: {len(model.store.trainable())} tensors, {n_params:,} parameters")

tile = rng.normal(size=(16, 16, 64, 4))
with no_grad():
    maps = model.level_maps(tile)
    logits = model.forward(tile)

print("\nshape ladder (encoder == decoder):")
for l, (e, d) in enumerate(zip(maps.enc, maps.dec), start=1):
    print(f"  level {l}: spatial {tuple(e.shape[1:4])}, channels {e.shape[-1]}")
print(f"logits: {logits.shape} (pre-softmax scores for 5 classes)")

# attention coefficients live in (0, 1) and modulate each skip connection
with no_grad():
    alpha = model.ladder.gates[0].coefficients(maps.enc[0], maps.dec[1])
print(f"\nlevel-1 attention coefficients: min {alpha.values.min():.3f}, "
      f"max {alpha.values.max():.3f}, mean {alpha.values.mean():.3f}")

# the MFA head concatenates all decoder resolutions before classifying
total = sum(8 * 2**l for l in range(4))
print(f"MFA concatenates {total} channels "
      f"({' + '.join(str(8 * 2**l) for l in range(4))}) -> 5")

bev_model = Bev2D(Bev2DConfig(dims=(64, 64), base_channels=8), rng=0)
bev = rng.normal(size=(64, 64, 2))
with no_grad():
    region_logits = bev_model.forward(bev)
    probs = ops.softmax(region_logits, axis=-1)
print(f"\n2D network: {bev.shape} -> {region_logits.shape} "
      "(background / corridor / non-corridor)")
print(f"per-pixel probabilities sum to 1: "
      f"{np.allclose(probs.values.sum(axis=-1), 1.0, atol=1e-12)}")
