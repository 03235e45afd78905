"""
Test checkpoint persistence: round trips and rejection of malformed files
"""

import sys
import os
import struct

import numpy as np
import pytest

# Add project root to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', '..'))

from src.core.blocks import ScalarGate
from src.core.complexity import count_params
from src.core.errors import CheckpointFormatError, DataError
from src.core.model import build, forward, maffsrn, tiny
from src.core.tensor import Tensor
from src.database.checkpoint_manager import MAGIC, CheckpointManager, load_checkpoint, save_checkpoint


def _header_bytes(net):
    config = len(net.cfg.to_json().encode("utf-8"))
    total = 4 + 4 + 4 + config + 4
    for name, tensor in net.named_parameters():
        ndim = 1 if isinstance(tensor, ScalarGate) or name.endswith(".bias") else 4
        total += 2 + len(name.encode("utf-8")) + 1 + 4 * ndim
    return total


def test_round_trip_is_bit_exact(tmp_path):
    net = build(tiny(3), seed=11)
    net["ffg.0.lambda.1"].data[...] = 0.8125
    path = save_checkpoint(net, str(tmp_path / "net.mafw"))
    loaded = load_checkpoint(path)
    assert loaded.cfg == net.cfg
    assert list(loaded) == list(net)
    for name in net:
        np.testing.assert_array_equal(loaded[name].numpy(), net[name].numpy())
    assert isinstance(loaded["ffg.0.lambda.1"], ScalarGate)
    assert loaded["ffg.0.lambda.1"].value == 0.8125

    x = Tensor(np.random.default_rng(0).uniform(0, 1, (1, 3, 6, 6)))
    np.testing.assert_array_equal(forward(loaded, x).numpy(), forward(net, x).numpy())


def test_file_size_is_payload_plus_header(tmp_path):
    net = build(maffsrn(2))
    path = save_checkpoint(net, str(tmp_path / "full.mafw"))
    assert os.path.getsize(path) == 4 * count_params(maffsrn(2)) + _header_bytes(net)


def test_save_creates_directories_and_no_temp_file(tmp_path):
    manager = CheckpointManager(str(tmp_path / "ckpts"))
    path = manager.save_checkpoint(build(tiny()), manager.path_for("epoch_0001"))
    assert path.endswith(os.path.join("ckpts", "epoch_0001.mafw"))
    assert os.listdir(str(tmp_path / "ckpts")) == ["epoch_0001.mafw"]


def test_bad_magic_and_version():
    manager = CheckpointManager()
    payload = manager.encode(build(tiny()))
    with pytest.raises(CheckpointFormatError):
        manager.decode(b"XXXX" + payload[4:])
    with pytest.raises(CheckpointFormatError):
        manager.decode(MAGIC + struct.pack("<I", 2) + payload[8:])


def test_truncated_and_trailing_bytes():
    manager = CheckpointManager()
    payload = manager.encode(build(tiny()))
    for cut in (3, 10, len(payload) // 2, len(payload) - 1):
        with pytest.raises(CheckpointFormatError):
            manager.decode(payload[:cut])
    with pytest.raises(CheckpointFormatError):
        manager.decode(payload + b"\x00")


def test_wrong_config_or_shapes():
    manager = CheckpointManager()
    small = manager.encode(build(tiny(channels=8)))
    config_len = struct.unpack("<I", small[8:12])[0]
    bad_config = b"{\"scale\": 7}"
    patched = small[:8] + struct.pack("<I", len(bad_config)) + bad_config + small[12 + config_len:]
    with pytest.raises(CheckpointFormatError):
        manager.decode(patched)

    # tensors of a 16-channel net under an 8-channel config
    wide = manager.encode(build(tiny(channels=16)))
    wide_config_len = struct.unpack("<I", wide[8:12])[0]
    config = small[12:12 + config_len]
    mixed = wide[:8] + struct.pack("<I", config_len) + config + wide[12 + wide_config_len:]
    with pytest.raises(CheckpointFormatError):
        manager.decode(mixed)


def test_duplicate_tensor_is_rejected():
    manager = CheckpointManager()
    net = build(tiny())
    payload = manager.encode(net)
    config_len = struct.unpack("<I", payload[8:12])[0]
    start = 12 + config_len
    count = struct.unpack("<I", payload[start:start + 4])[0]
    body = payload[start + 4:]
    name_len = struct.unpack("<H", body[:2])[0]
    ndim = body[2 + name_len]
    shape = struct.unpack(f"<{ndim}I", body[3 + name_len:3 + name_len + 4 * ndim])
    first = body[:3 + name_len + 4 * ndim + 4 * int(np.prod(shape))]
    duplicated = payload[:start] + struct.pack("<I", count + 1) + first + body
    with pytest.raises(CheckpointFormatError):
        manager.decode(duplicated)


def test_missing_file():
    with pytest.raises(DataError):
        load_checkpoint("does/not/exist.mafw")


def test_meta_network_cannot_be_saved():
    with pytest.raises(DataError):
        CheckpointManager().encode(build(tiny(), meta=True))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
