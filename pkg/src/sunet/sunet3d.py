"""3D multi-resolution attention encoder-decoder for voxel classification.

Level l (1-based) of the ladder holds feature maps of spatial extent
tile / 2^(l-1) with base_channels * 2^(l-1) channels, for the encoder and the
decoder alike; the deepest level doubles as the bottleneck. Optional heads:
multi-resolution feature aggregation (upsample every decoder map to full
resolution, concatenate, 1x1x1 convolve) and a feature-smoothing stack of
three per-voxel MLP layers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffcore import Param, Tensor, config_hash, ops
from .diffcore.ops import BatchNormState, ShapeError


class ParamStore:
    """Registry of named parameters and batch-norm buffers for one model.

    Creation order is the serialization order, so identical seeds give
    bit-identical state dicts.
    """

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.params: dict[str, Param] = {}
        self.buffers: dict[str, BatchNormState] = {}

    def _add(self, name: str, values: np.ndarray) -> Param:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        p = Param(name, Tensor(values, requires_grad=True))
        self.params[name] = p
        return p

    def kaiming(self, name: str, shape: tuple[int, ...], fan_in: int) -> Param:
        std = np.sqrt(2.0 / fan_in)
        return self._add(name, self.rng.normal(0.0, std, size=shape))

    def zeros(self, name: str, shape: tuple[int, ...]) -> Param:
        return self._add(name, np.zeros(shape))

    def ones(self, name: str, shape: tuple[int, ...]) -> Param:
        return self._add(name, np.ones(shape))

    def bn_state(self, name: str, channels: int) -> BatchNormState:
        if name in self.buffers:
            raise ValueError(f"duplicate buffer name {name!r}")
        state = BatchNormState(channels)
        self.buffers[name] = state
        return state

    def trainable(self) -> list[Param]:
        return list(self.params.values())

    def set_requires_grad(self, flag: bool):
        for p in self.params.values():
            p.tensor.requires_grad = flag

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {name: p.tensor.values.copy() for name, p in self.params.items()}
        for name, st in self.buffers.items():
            out[f"{name}.running_mean"] = st.running_mean.copy()
            out[f"{name}.running_var"] = st.running_var.copy()
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]):
        expected = set(self.params)
        for name in self.buffers:
            expected.add(f"{name}.running_mean")
            expected.add(f"{name}.running_var")
        if expected != set(state):
            missing = sorted(expected - set(state))[:3]
            extra = sorted(set(state) - expected)[:3]
            raise ShapeError(f"state dict mismatch (missing {missing}, extra {extra})")
        for name, p in self.params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.tensor.values.shape:
                raise ShapeError(f"{name}: shape {arr.shape} != {p.tensor.values.shape}")
            p.tensor.values = arr.copy()
        for name, st in self.buffers.items():
            st.running_mean = np.asarray(state[f"{name}.running_mean"]).copy()
            st.running_var = np.asarray(state[f"{name}.running_var"]).copy()


class ConvBNRelu:
    """k^n conv -> batch norm -> relu, channel-last, 'same' padding."""

    def __init__(self, store: ParamStore, name: str, nd: int, cin: int, cout: int,
                 kernel: int = 3):
        shape = (kernel,) * nd + (cin, cout)
        self.w = store.kaiming(f"{name}.w", shape, fan_in=cin * kernel**nd)
        self.b = store.zeros(f"{name}.b", (cout,))
        self.gamma = store.ones(f"{name}.gamma", (cout,))
        self.beta = store.zeros(f"{name}.beta", (cout,))
        self.bn = store.bn_state(f"{name}.bn", cout)
        self.pad = kernel // 2

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        h = ops.conv(x, self.w.tensor, self.b.tensor, padding=self.pad)
        h = ops.batch_norm(h, self.gamma.tensor, self.beta.tensor, self.bn, training)
        return ops.relu(h)


class PointwiseConv:
    """1^n convolution (a per-voxel linear map across channels)."""

    def __init__(self, store: ParamStore, name: str, nd: int, cin: int, cout: int):
        shape = (1,) * nd + (cin, cout)
        self.w = store.kaiming(f"{name}.w", shape, fan_in=cin)
        self.b = store.zeros(f"{name}.b", (cout,))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv(x, self.w.tensor, self.b.tensor)


class AttentionGate:
    """Additive attention on a skip connection.

    alpha = sigmoid(psi(relu(W_e skip + W_d gating))), one coefficient per
    cell, multiplied onto the skip map. The gating signal comes from the next
    coarser decoder level and is upsampled internally when needed.
    """

    def __init__(self, store: ParamStore, name: str, nd: int, skip_ch: int,
                 gate_ch: int):
        inter = max(skip_ch // 2, 1)
        self.w_e = PointwiseConv(store, f"{name}.we", nd, skip_ch, inter)
        self.w_d = PointwiseConv(store, f"{name}.wd", nd, gate_ch, inter)
        self.psi = PointwiseConv(store, f"{name}.psi", nd, inter, 1)

    def coefficients(self, skip: Tensor, gating: Tensor) -> Tensor:
        g = self.w_d(gating)
        if gating.shape[1:-1] != skip.shape[1:-1]:
            if tuple(2 * s for s in gating.shape[1:-1]) != skip.shape[1:-1]:
                raise ShapeError(
                    f"gating spatial {gating.shape[1:-1]} is neither equal to nor "
                    f"half of skip spatial {skip.shape[1:-1]}")
            g = ops.upsample(g, 2)
        return ops.sigmoid(self.psi(ops.relu(self.w_e(skip) + g)))

    def __call__(self, skip: Tensor, gating: Tensor) -> Tensor:
        return ops.mul(skip, self.coefficients(skip, gating))


@dataclass
class LevelMaps:
    """Encoder/decoder feature maps indexed by level (0 = full resolution)."""

    enc: list[Tensor]
    dec: list[Tensor]


class EncoderDecoder:
    """U-shaped ladder shared by the 3D and 2D pipelines.

    Encoder level: two ConvBNRelu blocks, then 2x max-pool down to the next
    level. Decoder level: gate the skip with the coarser decoder output,
    upsample, concatenate, two ConvBNRelu blocks.
    """

    def __init__(self, store: ParamStore, name: str, nd: int, in_channels: int,
                 base_channels: int, levels: int):
        self.nd = nd
        self.levels = levels
        self.base = base_channels
        ch = [base_channels * 2**l for l in range(levels)]
        self.enc_blocks = []
        for l in range(levels):
            cin = in_channels if l == 0 else ch[l - 1]
            self.enc_blocks.append((
                ConvBNRelu(store, f"{name}.enc{l + 1}.conv1", nd, cin, ch[l]),
                ConvBNRelu(store, f"{name}.enc{l + 1}.conv2", nd, ch[l], ch[l]),
            ))
        self.gates = []
        self.dec_blocks = []
        for l in range(levels - 1):
            self.gates.append(AttentionGate(store, f"{name}.gate{l + 1}", nd,
                                            skip_ch=ch[l], gate_ch=ch[l + 1]))
            self.dec_blocks.append((
                ConvBNRelu(store, f"{name}.dec{l + 1}.conv1", nd,
                           ch[l] + ch[l + 1], ch[l]),
                ConvBNRelu(store, f"{name}.dec{l + 1}.conv2", nd, ch[l], ch[l]),
            ))

    def __call__(self, x: Tensor, training: bool) -> LevelMaps:
        enc: list[Tensor] = []
        h = x
        for l in range(self.levels):
            for block in self.enc_blocks[l]:
                h = block(h, training)
            enc.append(h)
            if l < self.levels - 1:
                h = ops.max_pool(h, 2)
        dec: list[Tensor | None] = [None] * self.levels
        dec[-1] = enc[-1]
        for l in range(self.levels - 2, -1, -1):
            gated = self.gates[l](enc[l], dec[l + 1])
            up = ops.upsample(dec[l + 1], 2)
            h = ops.concat([up, gated], axis=-1)
            for block in self.dec_blocks[l]:
                h = block(h, training)
            dec[l] = h
        maps = LevelMaps(enc=enc, dec=dec)
        self._check_ladder(x, maps)
        return maps

    def _check_ladder(self, x: Tensor, maps: LevelMaps):
        tile = x.shape[1:-1]
        for l in range(self.levels):
            want_sp = tuple(s // 2**l for s in tile)
            want_ch = self.base * 2**l
            for kind, t in (("enc", maps.enc[l]), ("dec", maps.dec[l])):
                if t.shape[1:-1] != want_sp or t.shape[-1] != want_ch:
                    raise ShapeError(
                        f"{kind} level {l + 1}: shape {t.shape[1:]} != "
                        f"{want_sp + (want_ch,)}")


class FeatureSmoother:
    """Three per-voxel MLP layers (1^n convs) with ReLU in between; the last
    layer preserves the channel count."""

    def __init__(self, store: ParamStore, name: str, nd: int, channels: int):
        self.layers = [PointwiseConv(store, f"{name}.mlp{i + 1}", nd, channels, channels)
                       for i in range(3)]

    def __call__(self, x: Tensor) -> Tensor:
        h = self.layers[0](x)
        h = self.layers[1](ops.relu(h))
        return self.layers[2](ops.relu(h))


@dataclass
class SUNet3DConfig:
    tile_dims: tuple[int, int, int] = (16, 16, 64)
    in_channels: int = 4
    levels: int = 4
    base_channels: int = 32
    num_classes: int = 5
    use_mfa: bool = True
    use_fs: bool = False

    def __post_init__(self):
        div = 2 ** (self.levels - 1)
        if any(s % div for s in self.tile_dims):
            raise ShapeError(f"tile dims {self.tile_dims} must be divisible by {div}")
        if self.num_classes != 5:
            raise ShapeError("the object taxonomy has exactly 5 classes")

    def as_dict(self) -> dict:
        return {
            "arch": "sunet3d",
            "tile_dims": list(self.tile_dims),
            "in_channels": self.in_channels,
            "levels": self.levels,
            "base_channels": self.base_channels,
            "num_classes": self.num_classes,
            "use_mfa": self.use_mfa,
            "use_fs": self.use_fs,
        }


class SUNet3D:
    """Voxel-grid object classifier: attention U-Net backbone plus optional
    multi-resolution aggregation and feature smoothing heads."""

    def __init__(self, cfg: SUNet3DConfig, rng: np.random.Generator | int = 0):
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        self.cfg = cfg
        self.store = ParamStore(rng)
        self.ladder = EncoderDecoder(self.store, "ladder", 3, cfg.in_channels,
                                     cfg.base_channels, cfg.levels)
        n_all = cfg.base_channels * (2**cfg.levels - 1)
        if cfg.use_mfa:
            self.mfa_head = PointwiseConv(self.store, "mfa.head", 3, n_all,
                                          cfg.num_classes)
        else:
            self.plain_head = PointwiseConv(self.store, "head", 3,
                                            cfg.base_channels, cfg.num_classes)
        if cfg.use_fs:
            self.smoother = FeatureSmoother(self.store, "fs", 3, cfg.num_classes)

    def config_hash(self) -> int:
        return config_hash(self.cfg.as_dict())

    def level_maps(self, tile, training: bool = False) -> LevelMaps:
        x = _batched(tile, self.cfg.tile_dims, self.cfg.in_channels)
        return self.ladder(x, training)

    def mfa(self, maps: LevelMaps) -> Tensor:
        """Upsample every decoder map to full resolution, concatenate, and
        reduce to class channels with a pointwise conv."""
        ups = [maps.dec[0]]
        for l in range(1, self.cfg.levels):
            ups.append(ops.upsample(maps.dec[l], 2**l))
        return self.mfa_head(ops.concat(ups, axis=-1))

    def forward(self, tile, training: bool = False) -> Tensor:
        """Tile (W, H, D, F) -> pre-softmax logits (W, H, D, num_classes)."""
        maps = self.level_maps(tile, training)
        if self.cfg.use_mfa:
            logits = self.mfa(maps)
        else:
            logits = self.plain_head(maps.dec[0])
        if self.cfg.use_fs:
            logits = self.smoother(logits)
        out_shape = tuple(self.cfg.tile_dims) + (self.cfg.num_classes,)
        return ops.reshape(logits, out_shape)


def _batched(tile, tile_dims, in_channels) -> Tensor:
    t = tile if isinstance(tile, Tensor) else Tensor(np.asarray(tile))
    want = tuple(tile_dims) + (in_channels,)
    if t.shape != want:
        raise ShapeError(f"tile shape {t.shape} != configured {want}")
    return ops.reshape(t, (1,) + want)
