"""End to end at desk scale: pretrain the 2D regional network, train the 3D
network under the layout-consistency loss, run inference, and score it.

This is the same pipeline the `sunet` CLI drives (synth -> train2d ->
train3d -> infer -> eval -> render), called as a library. Takes a couple of
minutes on a laptop core.
"""

from pathlib import Path

import numpy as np

from sunet.pointcloud_io import CLASS_NAMES, SynthConfig, generate_synthetic_scene
from sunet.render import render_bev, write_ppm
from sunet.train_eval import RunConfig, evaluate, infer, pretrain_bev, train

OUT = Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

synth = dict(extent_xy=16.0, pylon_spacing=7.0, pylon_height=20.0,
             corridor_half_width=5.0, catenary_sag=1.5,
             vegetation_density=2.0, ground_density=3.0)
scenes = [generate_synthetic_scene(SynthConfig(rng_seed=s, **synth))
          for s in range(900, 904)]
train_scenes, val_scenes = scenes[:3], scenes[3:]
print(f"{len(train_scenes)} training scenes + {len(val_scenes)} validation "
      f"scene, ~{len(scenes[0])} points each")

run = RunConfig(name="demo", loss="hlc", epochs=40, seed=0,
                grid_dims=(16, 16, 64), tile_dims=(16, 16),
                base_channels=8, base_channels_2d=8,
                epochs_2d=80, augment_2d=False)

print("\npretraining the 2D regional network on BEV projections...")
bev_model = pretrain_bev(run, train_scenes, target_accuracy=0.98)

print("training the 3D network under the layout-consistency loss...")
result = train(run, train_scenes, val_scenes, bev_model=bev_model)
first, last = result.log[0], result.log[-1]
print(f"  epoch 1:  loss {float(first.split(',')[1]):.3f}")
print(f"  epoch {result.epochs_run}: loss {float(last.split(',')[1]):.3f}, "
      f"best val macro-F1 {100 * result.best_val_f1:.1f}%")

result.model.store.load_state_dict(result.best_state)
val = val_scenes[0]
pred = infer(result.model, run, val, result.z_max_global)
report = evaluate(pred, val.class_labels)
print(f"\nheld-out scene, {len(val)} points:")
print(report.to_text())

write_ppm(OUT / "demo_val_truth.ppm", render_bev(val))
write_ppm(OUT / "demo_val_pred.ppm", render_bev(val, labels=pred))
print(f"\nwrote ground-truth and predicted BEV renders to {OUT}")
