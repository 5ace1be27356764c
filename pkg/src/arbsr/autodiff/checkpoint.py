"""Weight checkpoint container.

Layout (all integers little-endian)::

    offset 0   8 bytes   magic b"ARBSRCKP"
    offset 8   uint32    format version (currently 1)
    offset 12  uint32    header length H in bytes
    offset 16  H bytes   UTF-8 JSON header, keys sorted:
                         {"config": {...},
                          "tensors": [{"name", "shape", "dtype": "<f4", "offset"}, ...]}
    16 + H     ...       raw row-major float32 data; "offset" is relative to here

Tensors appear in the order they were given. Writing is byte-deterministic.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

MAGIC = b"ARBSRCKP"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params, config=None):
    entries, blobs, offset = [], [], 0
    for name, value in params.items():
        arr = np.ascontiguousarray(getattr(value, "data", value), dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape), "dtype": "<f4", "offset": offset})
        blob = arr.tobytes()
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"config": config or {}, "tensors": entries},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(os.fspath(path), "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path):
    """Return ``(params, config)``; params keep the stored order."""
    with open(os.fspath(path), "rb") as f:
        raw = f.read()
    if len(raw) < 16 or raw[:8] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    version, hlen = struct.unpack("<II", raw[8:16])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(raw[16:16 + hlen].decode("utf-8"))
        base = 16 + hlen
        params = {}
        for e in header["tensors"]:
            count = int(np.prod(e["shape"], dtype=np.int64))
            start = base + e["offset"]
            data = np.frombuffer(raw, dtype=e["dtype"], count=count, offset=start)
            params[e["name"]] = data.astype(np.float32).reshape(e["shape"])
        return params, header["config"]
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
