"""Model checkpoint file format.

Layout: magic b"MTUW", little-endian u32 version, u32 JSON header length,
UTF-8 JSON header ({"config": ..., "tensors": [{name, shape, offset}]}),
then a little-endian float32 blob. Offsets are bytes from blob start.
Round trips are value-exact at float32.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MTUW"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, named: dict[str, np.ndarray], config: dict):
    index = []
    blobs = []
    offset = 0
    for name in sorted(named):
        arr = np.ascontiguousarray(named[name], dtype="<f4")
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps({"config": config, "tensors": index}).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(header)))
        f.write(header)
        for b in blobs:
            f.write(b)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"bad magic in {path}")
    version, hlen = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    blob = raw[12 + hlen:]
    named = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=entry["offset"])
        named[entry["name"]] = arr.reshape(shape).astype(np.float64)
    return named, header["config"]
