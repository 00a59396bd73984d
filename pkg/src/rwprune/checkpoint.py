"""Binary checkpoint format.

Layout (all integers little-endian):

    magic   4 bytes  b"RWP1"
    u16     format version (currently 1)
    u16     layer count
    per layer:
        u16      name length, then UTF-8 name
        u8       ndim, then u32 * ndim weight shape
        u8       dtype code (0 = float64, 1 = float32; 1 marks a lossy save)
        u8       flags (bit 0: mask present)
        u32      bias length (0 = no bias)
        weights  prod(shape) * itemsize bytes
        bias     bias length * itemsize bytes
        mask     ceil(prod(shape) / 8) bytes, 1 bit per weight, zero padded
    u32     metadata length, then canonical JSON (config snapshot, metrics)

Round trips are bit-exact at the stored dtype. Loading validates the mask
invariant (mask zero implies weight zero) and optionally the architecture.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"RWP1"
VERSION = 1
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}
_DTYPE_CODES = {"float64": 0, "float32": 1}


@dataclass
class LayerPayload:
    weights: np.ndarray
    bias: np.ndarray | None
    mask: np.ndarray | None
    dtype: str


@dataclass
class Checkpoint:
    layers: dict[str, LayerPayload]
    metadata: dict = field(default_factory=dict)


def _read(f, count: int, path) -> bytes:
    data = f.read(count)
    if len(data) != count:
        raise CheckpointError(f"{path}: truncated at byte offset {f.tell()}")
    return data


def save_checkpoint(path, net, metadata: dict | None = None, dtype: str = "float64") -> None:
    """Write the network's weights, biases and masks; metadata is embedded
    as canonical JSON so identical runs produce identical bytes."""
    if dtype not in _DTYPE_CODES:
        raise CheckpointError(f"unsupported dtype '{dtype}'")
    code = _DTYPE_CODES[dtype]
    np_dtype = _DTYPES[code]
    parametric = net.parametric
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<HH", VERSION, len(parametric))
    for name, layer in parametric.items():
        mask = net.masks.get(name)
        if mask is not None and np.any(layer.W[mask == 0.0] != 0.0):
            raise CheckpointError(f"layer '{name}' violates the mask invariant on save")
        encoded = name.encode()
        blob += struct.pack("<H", len(encoded)) + encoded
        blob += struct.pack("<B", layer.W.ndim)
        blob += struct.pack(f"<{layer.W.ndim}I", *layer.W.shape)
        flags = 1 if mask is not None else 0
        bias = layer.b
        blob += struct.pack("<BBI", code, flags, bias.size)
        blob += np.ascontiguousarray(layer.W, dtype=np_dtype).tobytes()
        blob += np.ascontiguousarray(bias, dtype=np_dtype).tobytes()
        if mask is not None:
            blob += np.packbits(mask.astype(np.uint8).ravel()).tobytes()
    meta = json.dumps(metadata or {}, sort_keys=True, separators=(",", ":")).encode()
    blob += struct.pack("<I", len(meta)) + meta
    Path(path).write_bytes(bytes(blob))


def load_checkpoint(path, expected=None) -> Checkpoint:
    """Read a checkpoint; ``expected`` (a Network or {name: shape} map)
    triggers architecture validation."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"{path}: no such file")
    with open(path, "rb") as f:
        if _read(f, 4, path) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
        version, n_layers = struct.unpack("<HH", _read(f, 4, path))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        layers: dict[str, LayerPayload] = {}
        for _ in range(n_layers):
            (name_len,) = struct.unpack("<H", _read(f, 2, path))
            name = _read(f, name_len, path).decode()
            (ndim,) = struct.unpack("<B", _read(f, 1, path))
            shape = struct.unpack(f"<{ndim}I", _read(f, 4 * ndim, path))
            code, flags, bias_len = struct.unpack("<BBI", _read(f, 6, path))
            if code not in _DTYPES:
                raise CheckpointError(f"{path}: unknown dtype code {code} for layer '{name}'")
            np_dtype = _DTYPES[code]
            size = int(np.prod(shape)) if ndim else 1
            weights = np.frombuffer(
                _read(f, size * np_dtype.itemsize, path), dtype=np_dtype
            ).reshape(shape).astype(np.float64)
            bias = None
            if bias_len:
                bias = np.frombuffer(
                    _read(f, bias_len * np_dtype.itemsize, path), dtype=np_dtype
                ).astype(np.float64)
            mask = None
            if flags & 1:
                packed = np.frombuffer(_read(f, (size + 7) // 8, path), dtype=np.uint8)
                bits = np.unpackbits(packed)
                if np.any(bits[size:]):
                    raise CheckpointError(f"{path}: corrupt mask padding for layer '{name}'")
                mask = bits[:size].astype(np.float64).reshape(shape)
                if np.any(weights[mask == 0.0] != 0.0):
                    raise CheckpointError(
                        f"{path}: mask invariant violated for layer '{name}'"
                    )
            layers[name] = LayerPayload(weights, bias, mask, str(np_dtype.name))
        (meta_len,) = struct.unpack("<I", _read(f, 4, path))
        try:
            metadata = json.loads(_read(f, meta_len, path).decode())
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"{path}: corrupt metadata record") from exc
    ckpt = Checkpoint(layers, metadata)
    if expected is not None:
        _validate_architecture(ckpt, expected, path)
    return ckpt


def _validate_architecture(ckpt: Checkpoint, expected, path) -> None:
    if hasattr(expected, "parametric"):
        expected = {name: layer.W.shape for name, layer in expected.parametric.items()}
    for name, shape in expected.items():
        if name not in ckpt.layers:
            raise CheckpointError(f"{path}: missing layer '{name}'")
        got = ckpt.layers[name].weights.shape
        if tuple(got) != tuple(shape):
            raise CheckpointError(
                f"{path}: shape mismatch for layer '{name}': expected {tuple(shape)}, got {got}"
            )


def install_checkpoint(net, ckpt: Checkpoint) -> None:
    """Copy checkpoint weights, biases and masks into a compatible network."""
    _validate_architecture(ckpt, net, "<checkpoint>")
    for name, layer in net.parametric.items():
        payload = ckpt.layers[name]
        layer.W = payload.weights.copy()
        if payload.bias is not None:
            layer.b = payload.bias.copy()
        if payload.mask is not None:
            net.masks[name] = payload.mask.copy()
