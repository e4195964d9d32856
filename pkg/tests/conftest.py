import numpy as np
import pytest

from sunet.diffcore import Tensor, ops
from sunet.pointcloud_io import SynthConfig, generate_synthetic_scene


def weighted_sum(out, seed=7):
    """Scalar loss with distinct per-element weights (exposes transposition
    and routing bugs that a plain sum would hide)."""
    rng = np.random.default_rng(seed)
    c = Tensor(rng.uniform(0.5, 1.5, size=out.shape))
    return ops.tensor_sum(ops.mul(out, c))


def tracked(rng, shape, away_from_zero=None):
    v = rng.normal(size=shape)
    if away_from_zero is not None:
        v = np.sign(v) * (np.abs(v) + away_from_zero)
    return Tensor(v, requires_grad=True)


@pytest.fixture(scope="session")
def small_scene():
    return generate_synthetic_scene(SynthConfig(rng_seed=123))


@pytest.fixture(scope="session")
def scene_pair():
    return [generate_synthetic_scene(SynthConfig(rng_seed=s)) for s in (11, 12)]
