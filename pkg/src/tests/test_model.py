"""
Test network assembly: parameter budgets, configs, forward shapes and determinism
"""

import sys
import os
import json

import numpy as np
import pytest

# Add project root to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', '..'))

from src.core import ops
from src.core.blocks import FfgConfig, MabConfig
from src.core.complexity import count_params
from src.core.errors import ConfigError, ShapeError
from src.core.model import (
    NetConfig,
    build,
    expected_shapes,
    forward,
    image_to_tensor,
    maffsrn,
    maffsrn_l,
    tensor_to_image,
    tiny,
)
from src.core.tensor import Tensor


def _within(value, target, tolerance=0.01):
    return abs(value - target) <= tolerance * target


def _ablation(fusion, cea):
    return NetConfig(mab=MabConfig(cea_enabled=cea), ffg=FfgConfig(fusion=fusion)).validate()


# ----------------------------------------------------------- param budget

def test_published_parameter_budgets():
    """Counts land within 1% of the published model sizes"""
    assert _within(build(maffsrn(2)).num_params(), 402_394)
    assert _within(build(maffsrn(3)).num_params(), 418_000)
    assert _within(build(maffsrn(4)).num_params(), 441_000)
    assert _within(build(maffsrn_l(2)).num_params(), 790_000)
    assert _within(count_params(_ablation("HFF", False)), 364_000)
    assert _within(count_params(_ablation("MBFF", False)), 372_000)
    assert _within(count_params(_ablation("HFF", True)), 394_000)
    assert _within(count_params(_ablation("MBFF", True)), 402_000)


def test_exact_parameter_totals():
    assert count_params(maffsrn(2)) == 401_954
    assert count_params(maffsrn(3)) == 418_304
    assert count_params(maffsrn(4)) == 441_194
    assert count_params(maffsrn_l(2)) == 789_930
    assert count_params(maffsrn(2), include_gates=False) == 401_944


@pytest.mark.parametrize("scale", [2, 3, 4])
@pytest.mark.parametrize("fusion", ["HFF", "MBFF", "BFF"])
@pytest.mark.parametrize("cea", [True, False])
def test_closed_form_matches_built_network(scale, fusion, cea):
    cfg = NetConfig(scale=scale, mab=MabConfig(cea_enabled=cea), ffg=FfgConfig(fusion=fusion)).validate()
    assert build(cfg, meta=True).num_params() == count_params(cfg)


def test_ablation_deltas():
    base = count_params(maffsrn(2))
    wide = NetConfig(mab=MabConfig(dilations=[1, 1], branch_kernels=[3, 5])).validate()
    assert count_params(wide) - base == 16_384
    three = NetConfig(mab=MabConfig(dilations=[1, 2, 1], branch_kernels=[3, 3, 3])).validate()
    assert count_params(three) - base == 9_344


def test_gate_count_and_init():
    net = build(maffsrn(2))
    gates = net.gates()
    assert len(gates) == 10
    assert all(g.value == 0.5 for g in gates)
    assert "lambda0.1" in net and "ffg.3.lambda.2" in net


# ----------------------------------------------------------------- config

def test_config_json_round_trip_and_defaults():
    cfg = maffsrn_l(3)
    assert NetConfig.from_json(cfg.to_json()) == cfg
    partial = NetConfig.from_dict({"scale": 4})
    assert partial.n_ffg == 4 and partial.ffg.fusion == "MBFF" and partial.scale == 4


def test_config_errors():
    with pytest.raises(ConfigError):
        NetConfig.from_json("{not json")
    with pytest.raises(ConfigError):
        NetConfig.from_dict({"scale": 5})
    with pytest.raises(ConfigError):
        NetConfig.from_dict({"channels": "wide"})
    with pytest.raises(ConfigError):
        NetConfig.from_dict({"cea_enabled": 1})
    with pytest.raises(ConfigError):
        NetConfig.from_dict({"recon_kernels": [3, 3]})
    with pytest.raises(ConfigError):
        NetConfig.from_dict([1, 2])


def test_config_unknown_keys_warn(caplog):
    with caplog.at_level("WARNING"):
        cfg = NetConfig.from_dict({"scale": 2, "dropout": 0.1})
    assert cfg.scale == 2
    assert "dropout" in caplog.text


def test_bundled_configs_load():
    root = os.path.join(os.path.dirname(__file__), '..', '..', 'data', 'configs')
    for name, expected in [("maffsrn_x2.json", 401_954), ("maffsrn_x3.json", 418_304),
                           ("maffsrn_x4.json", 441_194), ("maffsrn_l_x2.json", 789_930)]:
        assert count_params(NetConfig.load(os.path.join(root, name))) == expected
    with open(os.path.join(root, "tiny.json"), encoding="utf-8") as f:
        assert NetConfig.from_dict(json.load(f)) == tiny()


# ------------------------------------------------------------------ build

def test_build_is_deterministic():
    a, b = build(tiny(), seed=3), build(tiny(), seed=3)
    assert list(a) == list(b)
    for name in a:
        np.testing.assert_array_equal(a[name].numpy(), b[name].numpy())
    other = build(tiny(), seed=4)
    assert not np.array_equal(a["sfe.weight"].numpy(), other["sfe.weight"].numpy())


def test_expected_shapes_cover_every_tensor():
    shapes = expected_shapes(tiny())
    net = build(tiny())
    assert shapes == {name: t.shape for name, t in net.named_parameters()}
    assert shapes["recon.k5.weight"] == (12, 8, 5, 5)
    assert shapes["ffg.0.fuse.0.weight"] == (8, 16, 1, 1)


# ---------------------------------------------------------------- forward

def test_forward_output_shape():
    net = build(maffsrn(3))
    out = forward(net, Tensor(np.random.default_rng(0).uniform(0, 1, (1, 3, 24, 24))))
    assert out.shape == (1, 3, 72, 72)


def test_forward_rejects_bad_inputs():
    net = build(tiny())
    with pytest.raises(ShapeError):
        forward(net, Tensor.zeros((1, 1, 8, 8)))
    with pytest.raises(ShapeError):
        forward(net, Tensor.zeros((1, 3, 2, 8)))


def test_zero_network_is_bicubic():
    net = build(maffsrn(2)).zero_()
    x = Tensor(np.random.default_rng(1).uniform(0, 1, (1, 3, 12, 10)))
    expected = ops.resize_bicubic(x, 24, 20).numpy()
    np.testing.assert_array_equal(forward(net, x).numpy(), expected)


def test_forward_is_bit_deterministic():
    net = build(tiny(3), seed=5)
    x = Tensor(np.random.default_rng(2).uniform(0, 1, (2, 3, 9, 11)))
    np.testing.assert_array_equal(forward(net, x).numpy(), forward(net, x).numpy())


def test_batch_items_are_independent():
    net = build(tiny(2), seed=6)
    x = np.random.default_rng(3).uniform(0, 1, (2, 3, 8, 8))
    both = forward(net, Tensor(x)).numpy()
    single = forward(net, Tensor(x[1:])).numpy()
    np.testing.assert_allclose(both[1:], single, atol=1e-6)


def test_translation_consistency():
    """Away from the borders, super-resolving a crop equals cropping the super-resolved image"""
    net = build(tiny(2), seed=7)
    rng = np.random.default_rng(4)
    full = rng.uniform(0, 1, (1, 3, 216, 216))
    offset, size, margin = 54, 108, 45
    crop = full[:, :, offset:offset + size, offset:offset + size]

    out_full = forward(net, Tensor(full)).numpy()
    out_crop = forward(net, Tensor(crop)).numpy()
    lo, hi = 2 * margin, 2 * (size - margin)
    expected = out_full[:, :, 2 * offset + lo:2 * offset + hi, 2 * offset + lo:2 * offset + hi]
    np.testing.assert_allclose(out_crop[:, :, lo:hi, lo:hi], expected, atol=1e-5)


def test_image_tensor_conversion():
    pixels = np.array([[[0, 128, 255]]], dtype=np.uint8)
    tensor = image_to_tensor(pixels)
    assert tensor.shape == (1, 3, 1, 1)
    np.testing.assert_array_equal(tensor_to_image(tensor), pixels)

    values = Tensor(np.array([-0.2, 0.5, 1.3, 2.0 / 255]).reshape(1, 4, 1, 1))
    assert tensor_to_image(values).reshape(-1).tolist() == [0, 128, 255, 2]


def test_astype_keeps_values_and_gates():
    net = build(tiny())
    wide = net.astype(np.float64)
    assert wide.dtype == np.float64
    assert all(t.numpy().dtype == np.float64 for t in wide.params.values())
    assert len(wide.gates()) == len(net.gates())
    np.testing.assert_array_equal(wide["sfe.weight"].numpy(), net["sfe.weight"].numpy())


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
