"""Versioned binary container shared by dataset and checkpoint files.

Layout (all integers little-endian)::

    magic        8 bytes   b"SGANDSET" or b"SGANCKPT"
    version      uint32    currently 1
    header_len   uint32
    header       header_len bytes of UTF-8 JSON (sorted keys)
    payload      arrays back to back, float64 little-endian, C order
    checksum     32 bytes  SHA-256 of everything above

The header holds an ``arrays`` list of ``{"name", "shape", "offset"}``
entries (offset in bytes from the start of the payload) next to whatever
metadata the writer adds.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

VERSION = 1
DATASET_MAGIC = b"SGANDSET"
CHECKPOINT_MAGIC = b"SGANCKPT"


class IntegrityError(ValueError):
    """File is truncated, corrupt, or not of the expected kind."""


def write_container(path, magic: bytes, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    entries, blobs, offset = [], [], 0
    for name, arr in arrays.items():
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(np.shape(arr)), "offset": offset})
        blobs.append(raw)
        offset += len(raw)
    header = dict(meta)
    header["arrays"] = entries
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    body = magic + struct.pack("<II", VERSION, len(hbytes)) + hbytes + b"".join(blobs)
    Path(path).write_bytes(body + hashlib.sha256(body).digest())


def read_container(path, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if len(raw) < 8 + 8 + 32:
        raise IntegrityError(f"{path}: file too short")
    body, digest = raw[:-32], raw[-32:]
    if body[:8] != magic:
        raise IntegrityError(f"{path}: bad magic {body[:8]!r}, expected {magic!r}")
    if hashlib.sha256(body).digest() != digest:
        raise IntegrityError(f"{path}: checksum mismatch")
    version, hlen = struct.unpack("<II", body[8:16])
    if version != VERSION:
        raise IntegrityError(f"{path}: unsupported version {version}")
    header = json.loads(body[16:16 + hlen].decode())
    payload = memoryview(body)[16 + hlen:]
    arrays = {}
    for e in header.pop("arrays"):
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        start = e["offset"]
        arr = np.frombuffer(payload[start:start + 8 * count], dtype="<f8")
        if arr.size != count:
            raise IntegrityError(f"{path}: array {e['name']} truncated")
        arrays[e["name"]] = arr.astype(np.float64).reshape(e["shape"])
    return header, arrays
