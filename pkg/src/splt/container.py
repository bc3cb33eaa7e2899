"""Single-file container: JSON manifest + raw little-endian array payloads.

Layout: 8-byte magic, u64-LE manifest length, UTF-8 JSON manifest, then the
concatenated array payloads.  The manifest records every array's name, shape,
dtype, byte offset and length plus arbitrary metadata, so files are fully
self-describing and round-trip bitwise.  Writes are atomic (temp + rename).
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .utils import atomic_write_bytes

_MAGIC = b"SPLTCTR1"


def save_container(path: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    entries = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        blob = le.tobytes()
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": str(np.dtype(arr.dtype.str.lstrip("<>=|")).name),
            "offset": offset,
            "nbytes": len(blob),
        })
        blobs.append(blob)
        offset += len(blob)
    manifest = json.dumps({"meta": meta, "arrays": entries}, sort_keys=True).encode("utf-8")
    payload = _MAGIC + struct.pack("<Q", len(manifest)) + manifest + b"".join(blobs)
    atomic_write_bytes(path, payload)


def load_container(path: str) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != _MAGIC:
        raise ValueError(f"{path} is not a container file (bad magic)")
    (manifest_len,) = struct.unpack("<Q", raw[8:16])
    manifest = json.loads(raw[16:16 + manifest_len].decode("utf-8"))
    base = 16 + manifest_len
    arrays = {}
    for entry in manifest["arrays"]:
        start = base + entry["offset"]
        blob = raw[start:start + entry["nbytes"]]
        dtype = np.dtype(entry["dtype"]).newbyteorder("<")
        arr = np.frombuffer(blob, dtype=dtype).astype(entry["dtype"]).reshape(entry["shape"])
        arrays[entry["name"]] = arr
    return manifest["meta"], arrays
