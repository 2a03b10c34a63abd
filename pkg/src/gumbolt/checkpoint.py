"""Binary checkpoint format.

Layout (all integers little-endian): magic ``GBLT``, version u32, entry
count u32, then per entry: name length u32, name bytes (utf-8), dtype code
u8, ndim u8, each dimension u64, raw array bytes.  JSON metadata (config
echo, iteration, rng states, iterator state) travels as a uint8 entry named
``__meta__``.  Everything needed for a bit-exact training resume is stored:
parameters, optimizer moments, batch-norm statistics, persistent chains,
shuffle state.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"GBLT"
VERSION = 1

_DTYPE_CODES = {0: np.float64, 1: np.float32, 2: np.uint8, 3: np.int64}
_CODE_FOR = {np.dtype(v): k for k, v in _DTYPE_CODES.items()}


class CheckpointError(RuntimeError):
    pass


def write_tensors(path, tensors):
    """Write named arrays in the checkpoint container format."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(tensors)))
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr)
            if arr.dtype not in _CODE_FOR:
                raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<BB", _CODE_FOR[arr.dtype], arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())


def read_tensors(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}")
    version, count = struct.unpack("<II", raw[4:12])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    offset = 12
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        name = raw[offset : offset + name_len].decode("utf-8")
        offset += name_len
        code, ndim = struct.unpack_from("<BB", raw, offset)
        offset += 2
        shape = struct.unpack_from(f"<{ndim}Q", raw, offset)
        offset += 8 * ndim
        dtype = np.dtype(_DTYPE_CODES[code])
        n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        arr = np.frombuffer(raw, dtype=dtype, count=int(np.prod(shape, dtype=np.int64)),
                            offset=offset).reshape(shape)
        offset += n_bytes
        tensors[name] = arr.copy()
    return tensors


def pack_meta(meta):
    return np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8).copy()


def unpack_meta(arr):
    return json.loads(arr.tobytes().decode("utf-8"))


def rng_state(generator):
    """JSON-serializable state of a numpy Generator."""
    return generator.bit_generator.state


def restore_rng(state):
    gen = np.random.Generator(getattr(np.random, state["bit_generator"])())
    gen.bit_generator.state = state
    return gen
