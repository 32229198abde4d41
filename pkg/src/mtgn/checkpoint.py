"""Flat binary parameter archive.

Layout::

    b"MTGNCKPT"                      8-byte magic
    uint32 little-endian             header length in bytes
    header                           UTF-8 JSON, sorted keys, no whitespace
    payload                          concatenated little-endian float64 arrays

The header lists every parameter as ``{"name", "shape", "offset"}`` (offset in
float64 elements into the payload) together with a config snapshot and its
fingerprint. Writing the same parameters twice yields identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MTGNCKPT"


class CheckpointError(ValueError):
    pass


def fingerprint(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def dumps(state: dict, config: dict | None = None, extra: dict | None = None) -> bytes:
    entries, chunks, offset = [], [], 0
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name], dtype="<f8")
        entries.append({"name": name, "offset": offset, "shape": list(arr.shape)})
        chunks.append(arr.tobytes())
        offset += arr.size
    header = {
        "config": config or {},
        "extra": extra or {},
        "fingerprint": fingerprint(config or {}),
        "params": entries,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<I", len(hbytes)) + hbytes + b"".join(chunks)


def loads(blob: bytes):
    """Return ``(state, header)``."""
    if blob[:8] != MAGIC:
        raise CheckpointError("not an MTGN checkpoint (bad magic)")
    (hlen,) = struct.unpack("<I", blob[8:12])
    header = json.loads(blob[12 : 12 + hlen].decode())
    payload = np.frombuffer(blob[12 + hlen :], dtype="<f8")
    state = {}
    for e in header["params"]:
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        chunk = payload[e["offset"] : e["offset"] + n]
        if chunk.size != n:
            raise CheckpointError(f"truncated payload for {e['name']}")
        state[e["name"]] = chunk.astype(np.float64).reshape(e["shape"])
    if fingerprint(header["config"]) != header["fingerprint"]:
        raise CheckpointError("config fingerprint does not match stored config")
    return state, header


def save(path, state, config=None, extra=None):
    blob = dumps(state, config, extra)
    Path(path).write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


def load(path):
    return loads(Path(path).read_bytes())


def verify_config(stored: dict, expected: dict, fields=None):
    """Raise naming the first differing field between two config snapshots."""
    keys = fields if fields is not None else sorted(set(stored) | set(expected))
    for key in keys:
        if stored.get(key) != expected.get(key):
            raise CheckpointError(
                f"config mismatch on field {key!r}: checkpoint has {stored.get(key)!r}, expected {expected.get(key)!r}"
            )
