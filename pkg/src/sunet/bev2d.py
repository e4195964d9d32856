"""2D bird's-eye-view network predicting regional classes per pixel.

Same ladder as the 3D pipeline with 2D convolutions; input channels are
(mean elevation, occupancy count) and output channels are the three regional
classes (background/no-data, corridor, non-corridor).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import Adam, Tensor, config_hash, no_grad, ops
from .diffcore.ops import ShapeError
from .pointcloud_io import NUM_REGIONS
from .sunet3d import EncoderDecoder, ParamStore, PointwiseConv, _batched


@dataclass
class Bev2DConfig:
    dims: tuple[int, int] = (16, 16)
    in_channels: int = 2
    num_regions: int = 3
    levels: int = 4
    base_channels: int = 8

    def __post_init__(self):
        div = 2 ** (self.levels - 1)
        if any(s % div for s in self.dims):
            raise ShapeError(f"dims {self.dims} must be divisible by {div}")
        if self.num_regions != NUM_REGIONS:
            raise ShapeError("the regional taxonomy has exactly 3 classes")

    def as_dict(self) -> dict:
        return {
            "arch": "bev2d",
            "dims": list(self.dims),
            "in_channels": self.in_channels,
            "levels": self.levels,
            "base_channels": self.base_channels,
            "num_regions": self.num_regions,
        }


class Bev2D:
    """Regional semantics network over BEV grids."""

    def __init__(self, cfg: Bev2DConfig, rng: np.random.Generator | int = 0):
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        self.cfg = cfg
        self.store = ParamStore(rng)
        self.ladder = EncoderDecoder(self.store, "ladder", 2, cfg.in_channels,
                                     cfg.base_channels, cfg.levels)
        self.head = PointwiseConv(self.store, "head", 2, cfg.base_channels,
                                  cfg.num_regions)

    def config_hash(self) -> int:
        return config_hash(self.cfg.as_dict())

    def forward(self, bev, training: bool = False) -> Tensor:
        """BEV grid (W, H, 2) -> pre-softmax region logits (W, H, 3)."""
        x = _batched(bev, self.cfg.dims, self.cfg.in_channels)
        maps = self.ladder(x, training)
        logits = self.head(maps.dec[0])
        return ops.reshape(logits, tuple(self.cfg.dims) + (self.cfg.num_regions,))


# ---------------------------------------------------------------------------
# augmentation: horizontal/vertical flips and rotations by multiples of 90deg,
# applied jointly to features and labels


def flip_x(features: np.ndarray, labels: np.ndarray):
    return features[::-1, :].copy(), labels[::-1, :].copy()


def flip_y(features: np.ndarray, labels: np.ndarray):
    return features[:, ::-1].copy(), labels[:, ::-1].copy()


def rot90(features: np.ndarray, labels: np.ndarray, k: int = 1):
    return (np.rot90(features, k, axes=(0, 1)).copy(),
            np.rot90(labels, k, axes=(0, 1)).copy())


def augment_sample(features: np.ndarray, labels: np.ndarray,
                   rng: np.random.Generator):
    """Random element of the flip/rotation group, same transform for both."""
    if rng.random() < 0.5:
        features, labels = flip_x(features, labels)
    if rng.random() < 0.5:
        features, labels = flip_y(features, labels)
    k = int(rng.integers(0, 4))
    if k:
        features, labels = rot90(features, labels, k)
    return features, labels


# ---------------------------------------------------------------------------
# pretraining


def region_class_weights(datasets) -> np.ndarray:
    """Inverse-frequency weights over region labels, normalized to mean 1."""
    counts = np.zeros(NUM_REGIONS)
    for _, labels in datasets:
        counts += np.bincount(labels.reshape(-1), minlength=NUM_REGIONS)
    present = counts > 0
    weights = np.ones(NUM_REGIONS)
    weights[present] = counts[present].sum() / (present.sum() * counts[present])
    return weights


def weighted_pixel_ce(logits: Tensor, labels: np.ndarray,
                      weights: np.ndarray) -> Tensor:
    """Class-weighted cross-entropy averaged over all pixels."""
    w, h = labels.shape
    sel = np.zeros((w, h, NUM_REGIONS))
    flat = sel.reshape(-1, NUM_REGIONS)
    flat[np.arange(w * h), labels.reshape(-1)] = weights[labels.reshape(-1)]
    ls = ops.log_softmax(logits, axis=-1)
    return ops.mul(ops.tensor_sum(ops.mul(ls, sel)), -1.0 / (w * h))


def pixel_accuracy(model: Bev2D, dataset) -> float:
    total = correct = 0
    with no_grad():
        for features, labels in dataset:
            pred = np.argmax(model.forward(features).values, axis=-1)
            correct += int((pred == labels).sum())
            total += labels.size
    return correct / total


def pretrain_2d(dataset, cfg: Bev2DConfig, epochs: int, augment: bool = True,
                seed: int = 0, lr: float = 1e-3,
                target_accuracy: float | None = None):
    """Train the regional network on (features, labels) pairs.

    Deterministic under the seed; returns (model, log lines). The log has one
    "epoch,loss,pixel_acc" line per completed epoch. When target_accuracy is
    set, training stops at the first epoch that reaches it.
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("empty dataset")
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    rng = np.random.default_rng(seed)
    model = Bev2D(cfg, rng)
    aug_rng = np.random.default_rng(rng.integers(0, 2**63))
    weights = region_class_weights(dataset)
    opt = Adam(model.store.trainable(), lr=lr)
    log: list[str] = []
    for epoch in range(1, epochs + 1):
        total = 0.0
        for features, labels in dataset:
            if augment:
                features, labels = augment_sample(features, labels, aug_rng)
            opt.zero_grad()
            loss = weighted_pixel_ce(model.forward(features, training=True),
                                     labels, weights)
            loss.backward()
            opt.step()
            total += loss.item()
        acc = pixel_accuracy(model, dataset)
        log.append(f"{epoch},{total / len(dataset):.6f},{acc:.6f}")
        if target_accuracy is not None and acc >= target_accuracy:
            break
    return model, log
