"""Checkpoint round trips and validation errors."""

import numpy as np
import pytest

from rwprune.checkpoint import install_checkpoint, load_checkpoint, save_checkpoint
from rwprune.datasets import Dataset, stage_rng
from rwprune.errors import CheckpointError
from rwprune.nn import DenseSpec, Conv2DSpec, FlattenSpec, Network, ReLUSpec


def small_net(seed=0):
    rng = stage_rng(seed, "ckpt-net")
    net = Network.from_specs(
        [Conv2DSpec(2, 1, (3, 3), padding=1), FlattenSpec(), DenseSpec(2 * 6 * 6, 4)],
        (1, 6, 6),
        rng,
    )
    return net


def test_round_trip_is_bit_exact_float64(tmp_path):
    net = small_net()
    mask = np.ones_like(net.parametric["dense1"].W)
    mask[0, :5] = 0.0
    net.parametric["dense1"].W[0, :5] = 0.0
    net.set_mask("dense1", mask)
    path = tmp_path / "net.ckpt"
    save_checkpoint(path, net, {"note": "fixture", "value": 1.25})

    ckpt = load_checkpoint(path, expected=net)
    for name, layer in net.parametric.items():
        assert np.array_equal(ckpt.layers[name].weights, layer.W)
        assert np.array_equal(ckpt.layers[name].bias, layer.b)
    assert np.array_equal(ckpt.layers["dense1"].mask, mask)
    assert ckpt.layers["conv1"].mask is None
    assert ckpt.metadata == {"note": "fixture", "value": 1.25}


def test_round_trip_float32_is_exact_at_that_dtype(tmp_path):
    net = small_net()
    path = tmp_path / "net32.ckpt"
    save_checkpoint(path, net, dtype="float32")
    ckpt = load_checkpoint(path)
    assert ckpt.layers["dense1"].dtype == "float32"
    w32 = net.parametric["dense1"].W.astype(np.float32)
    assert np.array_equal(ckpt.layers["dense1"].weights.astype(np.float32), w32)


def test_identical_saves_produce_identical_bytes(tmp_path):
    net = small_net()
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(p1, net, {"config": {"seed": 1}})
    save_checkpoint(p2, net, {"config": {"seed": 1}})
    assert p1.read_bytes() == p2.read_bytes()


def test_reinstalled_network_evaluates_identically(tmp_path):
    net = small_net()
    rng = stage_rng(1, "ckpt-data")
    data = Dataset(
        rng.uniform(0, 1, size=(50, 1, 6, 6)),
        rng.integers(0, 4, size=50).astype(np.int64),
        "test",
        n_classes=4,
    )
    path = tmp_path / "net.ckpt"
    save_checkpoint(path, net, {})
    fresh = small_net(seed=99)  # different init, same architecture
    install_checkpoint(fresh, load_checkpoint(path))
    assert fresh.evaluate(data) == net.evaluate(data)
    assert np.array_equal(fresh.parametric["conv1"].W, net.parametric["conv1"].W)


def test_wrong_magic_is_not_a_checkpoint(tmp_path):
    path = tmp_path / "junk"
    path.write_bytes(b"WHAT" + b"\x00" * 64)
    with pytest.raises(CheckpointError, match="not a checkpoint"):
        load_checkpoint(path)


def test_version_mismatch_is_rejected(tmp_path):
    net = small_net()
    path = tmp_path / "net.ckpt"
    save_checkpoint(path, net)
    raw = bytearray(path.read_bytes())
    raw[4] = 99  # version low byte
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="unsupported format version"):
        load_checkpoint(path)


def test_truncated_checkpoint_reports_offset(tmp_path):
    net = small_net()
    path = tmp_path / "net.ckpt"
    save_checkpoint(path, net)
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(CheckpointError, match="truncated at byte offset"):
        load_checkpoint(path)


def test_corrupt_mask_padding_is_detected(tmp_path):
    # conv1 has 2*1*3*3 = 18 weights, so its bitmap carries 6 padding bits
    net = small_net()
    conv = net.parametric["conv1"]
    cmask = np.ones_like(conv.W)
    cmask[0, 0, 0, 0] = 0.0
    conv.W[0, 0, 0, 0] = 0.0
    net.set_mask("conv1", cmask)
    path = tmp_path / "net.ckpt"
    save_checkpoint(path, net)
    raw = bytearray(path.read_bytes())
    packed = np.packbits(cmask.astype(np.uint8).ravel()).tobytes()
    idx = bytes(raw).find(packed)
    assert idx > 0
    raw[idx + len(packed) - 1] |= 0x01  # set a padding bit
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="corrupt mask padding"):
        load_checkpoint(path)


def test_mask_invariant_checked_on_load(tmp_path):
    net = small_net()
    name = "dense1"
    layer = net.parametric[name]
    mask = np.ones_like(layer.W)
    mask[0, 0] = 0.0
    layer.W[0, 0] = 0.0
    net.set_mask(name, mask)
    path = tmp_path / "net.ckpt"
    save_checkpoint(path, net)
    raw = bytearray(path.read_bytes())
    # overwrite the first weight (float64 little-endian) with a nonzero
    header = raw.find(b"dense1") + len(b"dense1") + 1 + 8 + 6
    raw[header : header + 8] = np.float64(0.5).tobytes()
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="mask invariant violated"):
        load_checkpoint(path)


def test_shape_validation_against_expected_architecture(tmp_path):
    net = small_net()
    path = tmp_path / "net.ckpt"
    save_checkpoint(path, net)
    with pytest.raises(CheckpointError, match="shape mismatch"):
        load_checkpoint(path, expected={"dense1": (5, 5)})
    with pytest.raises(CheckpointError, match="missing layer"):
        load_checkpoint(path, expected={"dense9": (4, 72)})


def test_save_rejects_mask_invariant_violations(tmp_path):
    net = small_net()
    mask = np.ones_like(net.parametric["dense1"].W)
    mask[0, 0] = 0.0  # weight there is nonzero
    net.masks["dense1"] = mask  # bypass set_mask validation
    with pytest.raises(CheckpointError, match="mask invariant"):
        save_checkpoint(tmp_path / "bad.ckpt", net)
