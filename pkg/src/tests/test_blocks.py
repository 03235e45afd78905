"""
Test building blocks: cost-efficient attention, multi-attention block and feature fusion groups
"""

import sys
import os

import numpy as np
import pytest

# Add project root to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', '..'))

from src.core import ops
from src.core.blocks import (
    FfgConfig,
    MabConfig,
    ScalarGate,
    apply_conv,
    cea_forward,
    cea_specs,
    ffg_forward,
    fuse_features,
    init_cea_params,
    init_ffg_params,
    init_mab_params,
    mab_forward,
    scope,
)
from src.core.complexity import cea_params, fusion_params, mab_params
from src.core.errors import ConfigError, ShapeError
from src.core.model import NetConfig
from src.core.tensor import Tensor


def _random(shape, seed=0):
    return Tensor(np.random.default_rng(seed).uniform(-1, 1, shape))


def _count(params):
    return sum(t.size for t in params.values())


def _zero(params, predicate=lambda name: True):
    for name, tensor in params.items():
        if predicate(name) and not isinstance(tensor, ScalarGate):
            tensor.data[...] = 0


# ------------------------------------------------------------------- CEA

def test_cea_zero_weights_is_identity():
    params = init_cea_params(32, rng=np.random.default_rng(0))
    _zero(params)
    x = _random((1, 32, 7, 7))
    np.testing.assert_array_equal(cea_forward(x, params).numpy(), x.numpy())


def test_cea_parameter_count():
    params = init_cea_params(32, rng=np.random.default_rng(0))
    assert _count(params) == 1888
    assert cea_params(32) == 1888


def test_cea_matches_composition():
    params = init_cea_params(16, rng=np.random.default_rng(1))
    x = _random((2, 16, 6, 5), seed=1)
    specs = cea_specs(16)
    hidden = ops.conv2d(x, params["pw.weight"], params["pw.bias"], specs["cea.pw"])
    expected = ops.add(x, ops.conv2d(hidden, params["dw.weight"], params["dw.bias"], specs["cea.dw"]))
    np.testing.assert_array_equal(cea_forward(x, params).numpy(), expected.numpy())


def test_cea_channel_mismatch():
    params = init_cea_params(8, rng=np.random.default_rng(0))
    with pytest.raises(ShapeError):
        cea_forward(_random((1, 4, 5, 5)), params)


# ------------------------------------------------------------------- MAB

def _mab_features(x, params, cfg):
    """Enhanced features before the attention mask"""
    specs = cfg.layer_specs()
    feat = cea_forward(x, scope(params, "cea"), cfg.dw_kernel) if cfg.cea_enabled else x
    for i in range(cfg.body_convs):
        if i:
            feat = ops.relu(feat)
        feat = apply_conv(feat, params, f"body.{i}", specs[f"body.{i}"])
    return feat


def test_mab_zero_expand_gives_half_mask():
    cfg = MabConfig()
    params = init_mab_params(cfg, np.random.default_rng(2))
    _zero(params, lambda name: name.startswith("attn.expand"))
    x = _random((1, 32, 9, 10), seed=2)
    out = mab_forward(x, params, cfg)
    features = _mab_features(x, params, cfg)
    np.testing.assert_array_equal(out.numpy(), 0.5 * features.numpy())


def test_mab_mask_shrinks_features():
    cfg = MabConfig(channels=8)
    params = init_mab_params(cfg, np.random.default_rng(3))
    x = _random((1, 8, 12, 12), seed=3)
    out = mab_forward(x, params, cfg).numpy()
    features = _mab_features(x, params, cfg).numpy()
    assert out.shape == x.shape
    assert np.all(np.abs(out) <= np.abs(features))
    assert np.all(np.abs(out[features != 0]) < np.abs(features[features != 0]))


def test_mab_parameter_counts():
    cfg = MabConfig()
    assert _count(init_mab_params(cfg, np.random.default_rng(0))) == 22688
    assert mab_params(cfg) == 22688
    no_cea = MabConfig(cea_enabled=False)
    assert mab_params(no_cea) == 22688 - 1888
    five_by_five = MabConfig(dilations=[1, 1], branch_kernels=[3, 5])
    assert mab_params(five_by_five) - mab_params(cfg) == 1024
    three_branches = MabConfig(dilations=[1, 2, 1], branch_kernels=[3, 3, 3])
    assert mab_params(three_branches) - mab_params(cfg) == 584


def test_mab_preserves_shape_for_odd_sizes():
    cfg = MabConfig(channels=8)
    params = init_mab_params(cfg, np.random.default_rng(4))
    for height, width in [(3, 3), (5, 7), (10, 4), (11, 13)]:
        assert mab_forward(_random((1, 8, height, width)), params, cfg).shape == (1, 8, height, width)


def test_mab_rejects_small_or_mismatched_input():
    cfg = MabConfig(channels=8)
    params = init_mab_params(cfg, np.random.default_rng(5))
    with pytest.raises(ShapeError):
        mab_forward(_random((1, 8, 2, 2)), params, cfg)
    with pytest.raises(ShapeError):
        mab_forward(_random((1, 4, 6, 6)), params, cfg)


def test_mab_config_validation():
    with pytest.raises(ConfigError):
        MabConfig(channels=30, reduction=4).validate()
    with pytest.raises(ConfigError):
        MabConfig(dilations=[1, 2], branch_kernels=[3]).validate()
    with pytest.raises(ConfigError):
        MabConfig(dw_kernel=4).validate()


# ------------------------------------------------------------------- FFG

def test_ffg_zero_weights_halve_input():
    mab_cfg, cfg = MabConfig(channels=8), FfgConfig()
    params = init_ffg_params(mab_cfg, cfg, np.random.default_rng(6))
    _zero(params)
    x = _random((1, 8, 6, 6), seed=6)
    np.testing.assert_array_equal(ffg_forward(x, params, mab_cfg, cfg).numpy(), 0.5 * x.numpy())


def test_fusion_parameter_counts():
    mbff = NetConfig()
    hff = NetConfig(ffg=FfgConfig(fusion="HFF"))
    assert fusion_params(mbff) == 6240
    assert fusion_params(hff) == 4128
    params = init_ffg_params(MabConfig(), FfgConfig(fusion="BFF"), np.random.default_rng(0))
    assert sum(t.size for name, t in params.items() if name.startswith("fuse.")) == 6240


def test_fusion_mode_validation():
    with pytest.raises(ConfigError):
        FfgConfig(m=3, fusion="BFF").validate()
    with pytest.raises(ConfigError):
        FfgConfig(m=1, fusion="MBFF").validate()
    with pytest.raises(ConfigError):
        FfgConfig(fusion="SUM").validate()
    assert FfgConfig(m=1, fusion="HFF").validate().num_reduces == 1
    assert FfgConfig(fusion="m-bff").validate().fusion == "MBFF"


def test_fusion_wrong_feature_count():
    cfg = FfgConfig()
    params = init_ffg_params(MabConfig(channels=8), cfg, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        fuse_features([_random((1, 8, 4, 4))] * 3, params, cfg)


def _integer_fusion_params(cfg, channels, rng):
    params = {}
    for name, spec in cfg.fusion_specs(channels).items():
        params[f"{name}.weight"] = Tensor(rng.integers(-1, 2, spec.weight_shape).astype(np.float32))
        params[f"{name}.bias"] = Tensor(rng.integers(-2, 3, (1, channels, 1, 1)).astype(np.float32))
    return params


@pytest.mark.parametrize("fusion", ["HFF", "MBFF", "BFF"])
def test_channel_shuffle_is_a_weight_permutation(fusion):
    """Shuffled fusion equals unshuffled fusion with input-permuted reduce weights"""
    channels, m = 8, 4
    shuffled = FfgConfig(m=m, fusion=fusion).validate()
    plain = FfgConfig(m=m, fusion=fusion, channel_shuffle_enabled=False).validate()
    rng = np.random.default_rng(7)
    features = [Tensor(rng.integers(-3, 4, (1, channels, 5, 5)).astype(np.float32)) for _ in range(m)]
    params = _integer_fusion_params(shuffled, channels, rng)

    groups = shuffled.shuffle_groups_for_fusion()
    permuted = dict(params)
    for name, spec in shuffled.fusion_specs(channels).items():
        width = spec.in_channels
        index = Tensor(np.arange(width, dtype=np.float32).reshape(1, width, 1, 1))
        perm = ops.channel_shuffle(index, groups).numpy().reshape(-1).astype(int)
        weight = params[f"{name}.weight"].numpy()
        moved = np.zeros_like(weight)
        moved[:, perm] = weight
        permuted[f"{name}.weight"] = Tensor(moved)

    expected = fuse_features(features, params, shuffled).numpy()
    actual = fuse_features(features, permuted, plain).numpy()
    np.testing.assert_array_equal(actual, expected)


def test_ffg_gates_are_scalar_tensors():
    params = init_ffg_params(MabConfig(channels=8), FfgConfig(lambda_init=0.25), np.random.default_rng(0))
    for k in (1, 2):
        gate = params[f"lambda.{k}"]
        assert isinstance(gate, ScalarGate)
        assert gate.shape == (1, 1, 1, 1)
        assert gate.value == 0.25


def test_ffg_gate_scales_identity_path():
    mab_cfg, cfg = MabConfig(channels=8), FfgConfig()
    params = init_ffg_params(mab_cfg, cfg, np.random.default_rng(8))
    _zero(params)
    params["lambda.1"] = ScalarGate(2.0)
    x = _random((1, 8, 6, 6), seed=8)
    np.testing.assert_array_equal(ffg_forward(x, params, mab_cfg, cfg).numpy(), 2.0 * x.numpy())


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
