"""Binary weights file, round-trip exact at 32 bits.

Layout (all integers little-endian):

    magic    4 bytes  b"A2J1"
    version  u32      currently 1
    count    u32      number of tensors
    per tensor:
        name_len u32, name bytes (utf-8, e.g. "conv1.w")
        rank     u32
        extents  rank x u32
        data     prod(extents) x f32

Only parameters are stored; Adam moments and the step counter reset on load.
"""

import struct
from pathlib import Path

import numpy as np

from .model import LayerShapeError, ModelSpec, ModelState, param_shapes

MAGIC = b"A2J1"
VERSION = 1


class WeightsError(ValueError):
    """A weights file is malformed."""


class WeightsMagicError(WeightsError):
    pass


class WeightsVersionError(WeightsError):
    pass


class WeightsTruncatedError(WeightsError):
    pass


def _tensor_names(spec: ModelSpec):
    names = spec.layer_names()
    out = []
    for i in spec.param_layers():
        out.append((i, "w", f"{names[i]}.w"))
        out.append((i, "b", f"{names[i]}.b"))
    return out


def save_weights(spec: ModelSpec, state: ModelState, path):
    """Write the state's parameters for this spec."""
    entries = _tensor_names(spec)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(entries)))
        for li, field, name in entries:
            arr = np.ascontiguousarray(state.params[li][field], dtype="<f4")
            raw = name.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_weights(spec: ModelSpec, path) -> ModelState:
    """Read parameters back into a fresh state for this spec (moments zeroed)."""
    raw = Path(path).read_bytes()
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(raw):
            raise WeightsTruncatedError(f"{path}: truncated while reading {what}")
        chunk = raw[pos:pos + n]
        pos += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise WeightsMagicError(f"{path}: bad magic, expected {MAGIC!r}")
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise WeightsVersionError(f"{path}: unsupported version {version}")

    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4, "name length"))
        name = take(name_len, "name").decode("utf-8")
        (rank,) = struct.unpack("<I", take(4, "rank"))
        shape = struct.unpack(f"<{rank}I", take(4 * rank, "extents"))
        n = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(take(4 * n, f"tensor {name}"), dtype="<f4")
        tensors[name] = data.reshape(shape).astype(np.float32)
    if pos != len(raw):
        raise WeightsError(f"{path}: {len(raw) - pos} trailing bytes")

    expected = param_shapes(spec)
    names = spec.layer_names()
    params, m, v = {}, {}, {}
    for li, shapes in expected.items():
        params[li], m[li], v[li] = {}, {}, {}
        for field, shape in shapes.items():
            name = f"{names[li]}.{field}"
            if name not in tensors:
                raise LayerShapeError(f"{path}: missing tensor {name} for this spec")
            arr = tensors.pop(name)
            if arr.shape != shape:
                raise LayerShapeError(f"{path}: layer {names[li]}.{field} has shape "
                                      f"{arr.shape}, spec expects {shape}")
            params[li][field] = arr
            m[li][field] = np.zeros_like(arr)
            v[li][field] = np.zeros_like(arr)
    if tensors:
        raise LayerShapeError(f"{path}: unexpected tensors {sorted(tensors)}")
    return ModelState(params, m, v, 0)
