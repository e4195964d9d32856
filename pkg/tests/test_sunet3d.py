import numpy as np
import pytest

from conftest import weighted_sum
from sunet.diffcore import Tensor, grad_check, ops
from sunet.diffcore.ops import ShapeError
from sunet.sunet3d import (
    AttentionGate,
    FeatureSmoother,
    LevelMaps,
    ParamStore,
    SUNet3D,
    SUNet3DConfig,
)

DESK = SUNet3DConfig(tile_dims=(16, 16, 64), in_channels=4, base_channels=8)


class TestShapes:
    def test_forward_shape_contract(self):
        model = SUNet3D(DESK, rng=0)
        tile = np.random.default_rng(0).normal(size=(16, 16, 64, 4))
        assert model.forward(tile).shape == (16, 16, 64, 5)

    def test_shape_ladder(self):
        model = SUNet3D(DESK, rng=0)
        tile = np.random.default_rng(1).normal(size=(16, 16, 64, 4))
        maps = model.level_maps(tile)
        for l in range(4):
            want_sp = (16 // 2**l, 16 // 2**l, 64 // 2**l)
            want_ch = 8 * 2**l
            assert maps.enc[l].shape == (1,) + want_sp + (want_ch,)
            assert maps.dec[l].shape == (1,) + want_sp + (want_ch,)

    def test_wrong_tile_shape_rejected(self):
        model = SUNet3D(DESK, rng=0)
        with pytest.raises(ShapeError):
            model.forward(np.zeros((8, 16, 64, 4)))

    def test_indivisible_tile_dims_rejected(self):
        with pytest.raises(ShapeError):
            SUNet3DConfig(tile_dims=(12, 16, 64))

    def test_zero_input_gives_spatially_constant_logits(self):
        model = SUNet3D(DESK, rng=0)  # biases and betas start at zero
        logits = model.forward(np.zeros((16, 16, 64, 4))).values
        flat = logits.reshape(-1, 5)
        np.testing.assert_allclose(flat, np.broadcast_to(flat[0], flat.shape),
                                   atol=1e-12)


class TestAttentionGate:
    def _gate_and_inputs(self, seed=0):
        rng = np.random.default_rng(seed)
        store = ParamStore(rng)
        gate = AttentionGate(store, "g", 3, skip_ch=4, gate_ch=8)
        skip = Tensor(rng.normal(size=(1, 4, 4, 8, 4)))
        gating = Tensor(rng.normal(size=(1, 2, 2, 4, 8)))
        return gate, skip, gating

    def test_forced_full_pass_through(self):
        gate, skip, gating = self._gate_and_inputs()
        gate.psi.w.tensor.values[:] = 0.0
        gate.psi.b.tensor.values[:] = 50.0  # sigmoid(50) == 1.0 in float64
        out = gate(skip, gating)
        np.testing.assert_array_equal(out.values, skip.values)

    def test_forced_full_suppression(self):
        gate, skip, gating = self._gate_and_inputs()
        gate.psi.w.tensor.values[:] = 0.0
        gate.psi.b.tensor.values[:] = -800.0
        out = gate(skip, gating)
        np.testing.assert_array_equal(out.values, np.zeros_like(skip.values))

    def test_coefficients_bounded(self):
        gate, skip, gating = self._gate_and_inputs(3)
        alpha = gate.coefficients(skip, gating).values
        assert alpha.shape == (1, 4, 4, 8, 1)
        assert (alpha > 0.0).all() and (alpha < 1.0).all()

    def test_equal_resolution_gating_accepted(self):
        rng = np.random.default_rng(4)
        store = ParamStore(rng)
        gate = AttentionGate(store, "g", 3, skip_ch=4, gate_ch=6)
        skip = Tensor(rng.normal(size=(1, 4, 4, 4, 4)))
        gating = Tensor(rng.normal(size=(1, 4, 4, 4, 6)))
        assert gate(skip, gating).shape == skip.shape

    def test_incompatible_gating_rejected(self):
        gate, skip, _ = self._gate_and_inputs()
        with pytest.raises(ShapeError):
            gate(skip, Tensor(np.zeros((1, 3, 3, 3, 8))))

    def test_gradients_through_gate(self):
        rng = np.random.default_rng(5)
        store = ParamStore(rng)
        gate = AttentionGate(store, "g", 3, skip_ch=2, gate_ch=4)
        skip = Tensor(rng.normal(size=(1, 2, 2, 4, 2)), requires_grad=True)
        gating = Tensor(rng.normal(size=(1, 1, 1, 2, 4)), requires_grad=True)
        inputs = [skip, gating] + [p.tensor for p in store.trainable()]
        report = grad_check(lambda *ts: weighted_sum(gate(ts[0], ts[1])),
                            inputs, tol=1e-4, max_entries=10)
        assert report.passed, report.max_rel_error


class TestMfa:
    def test_channel_arithmetic(self):
        model = SUNet3D(DESK, rng=0)
        # 8 + 16 + 32 + 64 concatenated channels reduced to 5
        assert model.mfa_head.w.tensor.shape == (1, 1, 1, 120, 5)
        tile = np.random.default_rng(2).normal(size=(16, 16, 64, 4))
        assert model.mfa(model.level_maps(tile)).shape == (1, 16, 16, 64, 5)

    def test_reduces_to_linear_map_of_first_level(self):
        model = SUNet3D(DESK, rng=1)
        rng = np.random.default_rng(3)
        d1 = rng.normal(size=(1, 16, 16, 64, 8))
        maps = LevelMaps(enc=[], dec=[
            Tensor(d1),
            Tensor(np.zeros((1, 8, 8, 32, 16))),
            Tensor(np.zeros((1, 4, 4, 16, 32))),
            Tensor(np.zeros((1, 2, 2, 8, 64))),
        ])
        out = model.mfa(maps).values
        w = model.mfa_head.w.tensor.values[0, 0, 0, :8, :]
        b = model.mfa_head.b.tensor.values
        expected = d1 @ w + b
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_matches_straight_line_oracle(self):
        cfg = SUNet3DConfig(tile_dims=(8, 8, 8), in_channels=2, base_channels=4)
        model = SUNet3D(cfg, rng=2)
        rng = np.random.default_rng(4)
        dec = [Tensor(rng.normal(size=(1, 8 // 2**l, 8 // 2**l, 8 // 2**l, 4 * 2**l)))
               for l in range(4)]
        out = model.mfa(LevelMaps(enc=[], dec=dec)).values
        # hand-rolled upsample/concat/matmul
        stacked = [dec[0].values]
        for l in range(1, 4):
            v = dec[l].values
            for ax in (1, 2, 3):
                v = np.repeat(v, 2**l, axis=ax)
            stacked.append(v)
        cat = np.concatenate(stacked, axis=-1)
        w = model.mfa_head.w.tensor.values.reshape(60, 5)
        expected = cat @ w + model.mfa_head.b.tensor.values
        np.testing.assert_allclose(out, expected, atol=1e-12)


class TestFeatureSmoother:
    def test_identity_initialized_is_identity_on_nonnegative(self):
        store = ParamStore(np.random.default_rng(0))
        fs = FeatureSmoother(store, "fs", 3, 5)
        for layer in fs.layers:
            layer.w.tensor.values[:] = np.eye(5).reshape(1, 1, 1, 5, 5)
            layer.b.tensor.values[:] = 0.0
        x = Tensor(np.abs(np.random.default_rng(1).normal(size=(1, 4, 4, 4, 5))))
        np.testing.assert_allclose(fs(x).values, x.values, atol=1e-12)

    def test_preserves_shape(self):
        store = ParamStore(np.random.default_rng(2))
        fs = FeatureSmoother(store, "fs", 3, 5)
        x = Tensor(np.random.default_rng(3).normal(size=(1, 2, 2, 4, 5)))
        assert fs(x).shape == x.shape

    def test_gradients(self):
        store = ParamStore(np.random.default_rng(4))
        fs = FeatureSmoother(store, "fs", 3, 5)
        x = Tensor(np.random.default_rng(5).normal(size=(1, 2, 2, 2, 5)),
                   requires_grad=True)
        inputs = [x] + [p.tensor for p in store.trainable()]
        report = grad_check(lambda *ts: weighted_sum(fs(ts[0])), inputs,
                            tol=1e-4, max_entries=10)
        assert report.passed, report.max_rel_error


class TestToggles:
    def test_mfa_off_uses_plain_head(self):
        cfg = SUNet3DConfig(tile_dims=(8, 8, 8), in_channels=2,
                            base_channels=4, use_mfa=False)
        model = SUNet3D(cfg, rng=0)
        names = [p.name for p in model.store.trainable()]
        assert not any(n.startswith("mfa") for n in names)
        assert any(n.startswith("head") for n in names)
        tile = np.random.default_rng(1).normal(size=(8, 8, 8, 2))
        assert model.forward(tile).shape == (8, 8, 8, 5)

    def test_fs_toggle_adds_smoother_params(self):
        cfg = SUNet3DConfig(tile_dims=(8, 8, 8), in_channels=2,
                            base_channels=4, use_fs=True)
        names = [p.name for p in SUNet3D(cfg, rng=0).store.trainable()]
        assert sum(n.startswith("fs") for n in names) == 6

    def test_equal_seeds_equal_parameters(self):
        a = SUNet3D(DESK, rng=123)
        b = SUNet3D(DESK, rng=123)
        for pa, pb in zip(a.store.trainable(), b.store.trainable()):
            assert pa.name == pb.name
            np.testing.assert_array_equal(pa.tensor.values, pb.tensor.values)


def jitter_params(store, seed, scale=0.05):
    """Nudge parameters off their init values. Zero-init biases can leave
    ReLU pre-activations exactly at the kink (where finite differences and
    the subgradient legitimately disagree), so gradient tests perturb first."""
    rng = np.random.default_rng(seed)
    for p in store.trainable():
        p.tensor.values += rng.normal(0.0, scale, p.tensor.shape)


class TestEndToEndGradient:
    def test_loss_gradient_matches_finite_differences(self):
        from sunet import fusion
        cfg = SUNet3DConfig(tile_dims=(8, 8, 16), in_channels=2,
                            base_channels=4, use_mfa=True, use_fs=True)
        model = SUNet3D(cfg, rng=7)
        jitter_params(model.store, 100)
        rng = np.random.default_rng(8)
        tile = rng.normal(size=(8, 8, 16, 2))
        gt_class = rng.integers(0, 5, (8, 8, 16))
        gt_region = rng.integers(1, 3, (8, 8, 16))
        occupied = rng.random((8, 8, 16)) < 0.3
        occupied.reshape(-1)[0] = True
        region_logits = Tensor(rng.normal(size=(8, 8, 16, 3)), requires_grad=True)
        table = fusion.HierarchyTable()
        params = [p.tensor for p in model.store.trainable()]

        def loss_fn(*_):
            logits = model.forward(tile, training=True)
            return fusion.hlc_loss(logits, region_logits, gt_class, gt_region,
                                   occupied, table)

        report = grad_check(loss_fn, params + [region_logits], tol=1e-4,
                            max_entries=2)
        assert report.passed, report.max_rel_error
