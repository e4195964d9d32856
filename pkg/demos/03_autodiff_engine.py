"""A tour of the reverse-mode tensor engine the networks are built on.

Everything is float64 numpy under the hood; every operation registers a
backward closure, and finite differences can audit any gradient.
"""

import numpy as np

from sunet.diffcore import Adam, Param, Tensor, grad_check, no_grad, ops
from sunet.diffcore.ops import BatchNormState

rng = np.random.default_rng(0)

# forward + backward through a tiny expression
x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
w = Tensor(rng.normal(size=(3, 4)))
loss = ops.tensor_sum(ops.mul(x, w))
loss.backward()
print("d(sum(w*x))/dx equals w exactly:", bool(np.array_equal(x.grad, w.values)))

# gradients accumulate until cleared, like any tape-based engine
loss.backward()
print("second backward doubles the gradient:",
      bool(np.array_equal(x.grad, 2 * w.values)))

# convolution: channel-last, 2D (rank-4) or 3D (rank-5) inputs
img = Tensor(rng.normal(size=(1, 8, 8, 8, 2)))
kernel = Tensor(rng.normal(size=(3, 3, 3, 2, 4)) * 0.1)
feat = ops.conv(img, kernel, None, padding=1)
print(f"\n3D conv: {img.shape} -> {feat.shape}")
pooled = ops.max_pool(feat, 2)
back = ops.upsample(pooled, 2)
print(f"max-pool halves space {feat.shape[1:4]} -> {pooled.shape[1:4]}, "
      f"nearest upsample restores {back.shape[1:4]}")

# batch norm keeps running statistics for eval mode
state = BatchNormState(4)
normed = ops.batch_norm(feat, Tensor(np.ones(4)), Tensor(np.zeros(4)), state,
                        training=True)
print(f"batch-norm train output per-channel mean ~ 0: "
      f"{np.abs(normed.values.mean(axis=(0, 1, 2, 3))).max():.1e}")

# every gradient is checkable against central finite differences
probe = Tensor(rng.normal(size=(2, 5)), requires_grad=True)
r = grad_check(lambda t: ops.tensor_sum(ops.mul(ops.softmax(t, axis=-1),
                                                ops.sigmoid(t))),
               [probe], tol=1e-6)
print(f"\nfinite-difference audit of softmax*sigmoid: max rel err "
      f"{r.max_rel_error:.2e} (tol 1e-6) -> {'ok' if r.passed else 'BROKEN'}")

# Adam drives a toy least-squares problem
target = rng.normal(size=(4, 4))
p = Param("p", Tensor(np.zeros((4, 4)), requires_grad=True))
opt = Adam([p], lr=0.1)
for step in range(200):
    opt.zero_grad()
    diff = ops.sub(p.tensor, Tensor(target))
    ops.tensor_sum(ops.mul(diff, diff)).backward()
    opt.step()
print(f"Adam fit of a 4x4 target: final residual "
      f"{np.abs(p.tensor.values - target).max():.1e}")

# inference runs without building a graph
with no_grad():
    silent = ops.conv(img, kernel, None, padding=1)
print("graph construction off under no_grad():", not silent.tracked)
