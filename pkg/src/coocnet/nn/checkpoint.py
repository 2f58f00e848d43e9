"""Binary model checkpoints.

Layout (little-endian)::

    b"CNET" | u16 version | u32 descriptor length | descriptor (UTF-8 JSON)
    | parameter arrays in Model.parameters() order | u32 CRC-32 of all prior bytes

The descriptor holds the layer list, input shape, float dtype, metadata and
the name/shape of every parameter array, so a reader can check the payload
size before touching it.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from ..errors import CheckpointError, CheckpointVersionError, CorruptCheckpointError
from .layers import layer_from_dict
from .model import Model, _param_order

MAGIC = b"CNET"
VERSION = 1
_HEAD = struct.Struct("<4sHI")


def checkpoint_bytes(model: Model) -> bytes:
    named = model.named_parameters()
    descriptor = {
        "layers": model.describe(),
        "input_shape": list(model.input_shape),
        "dtype": model.dtype.name,
        "metadata": model.metadata,
        "parameters": [[name, list(arr.shape)] for name, arr in named],
    }
    desc = json.dumps(descriptor, sort_keys=True).encode("utf-8")
    le = model.dtype.newbyteorder("<")
    body = b"".join(np.ascontiguousarray(arr, dtype=le).tobytes() for _, arr in named)
    payload = _HEAD.pack(MAGIC, VERSION, len(desc)) + desc + body
    return payload + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)


def save_checkpoint(model: Model, path) -> Path:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(checkpoint_bytes(model))
    tmp.replace(path)
    return path


def model_from_bytes(raw: bytes, where="<bytes>") -> Model:
    if len(raw) < _HEAD.size + 4:
        raise CorruptCheckpointError(f"{where}: checkpoint truncated")
    magic, version, dlen = _HEAD.unpack_from(raw)
    if magic != MAGIC:
        raise CorruptCheckpointError(f"{where}: not a checkpoint (magic {magic!r})")
    if version != VERSION:
        raise CheckpointVersionError(f"{where}: checkpoint version {version}, this build reads {VERSION}")
    (crc,) = struct.unpack_from("<I", raw, len(raw) - 4)
    if zlib.crc32(raw[:-4]) & 0xFFFFFFFF != crc:
        raise CorruptCheckpointError(f"{where}: checksum mismatch (truncated or damaged file)")
    try:
        desc = json.loads(raw[_HEAD.size : _HEAD.size + dlen].decode("utf-8"))
        dtype = np.dtype(desc["dtype"]).newbyteorder("<")
        layers = [layer_from_dict(d) for d in desc["layers"]]
        pos = _HEAD.size + dlen
        flat = []
        for _, shape in desc["parameters"]:
            n = int(np.prod(shape))
            flat.append(np.frombuffer(raw, dtype=dtype, count=n, offset=pos).reshape(shape))
            pos += n * dtype.itemsize
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptCheckpointError(f"{where}: malformed checkpoint ({exc})") from None
    if pos != len(raw) - 4:
        raise CorruptCheckpointError(f"{where}: payload size does not match descriptor")

    # rebuild per-layer dicts using the same key order the writer used
    probe = Model(layers, desc["input_shape"], dtype=np.dtype(desc["dtype"]))
    params, it = [], iter(flat)
    for p in probe.params:
        params.append({k: np.array(next(it), dtype=probe.dtype) for k in sorted(p, key=_param_order)})
    try:
        return Model(layers, desc["input_shape"], params, dtype=np.dtype(desc["dtype"]), metadata=desc["metadata"])
    except CheckpointError:
        raise
    except ValueError as exc:
        raise CorruptCheckpointError(f"{where}: {exc}") from None


def load_checkpoint(path) -> Model:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror or exc}") from exc
    return model_from_bytes(raw, path)
