"""Binary container for weights, priors and cached arrays.

Layout: 8 magic bytes, a little-endian uint64 header length, a UTF-8 JSON
header, then the raw little-endian float64 payload of every tensor in the
order listed in the header.
"""

import hashlib
import json
import struct

import numpy as np

MAGIC = b"DEEPMP01"


class CheckpointError(ValueError):
    pass


def config_hash(config):
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def save_checkpoint(path, tensors, config=None, kind="pasp", extra=None):
    """Write ``tensors`` (name -> array) with a JSON header."""
    config = config or {}
    entries, offset = [], 0
    arrays = []
    for name, a in tensors.items():
        a = np.ascontiguousarray(a, dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        offset += a.nbytes
        arrays.append(a)
    header = {
        "kind": kind,
        "config": config,
        "config_hash": config_hash(config),
        "tensors": entries,
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for a in arrays:
            f.write(a.tobytes())


def load_checkpoint(path):
    """Return ``(tensors, header)``."""
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic at offset 0)")
    if len(buf) < 16:
        raise CheckpointError(f"{path}: truncated header at offset {len(buf)}")
    (n,) = struct.unpack("<Q", buf[8:16])
    try:
        header = json.loads(buf[16 : 16 + n])
    except ValueError as e:
        raise CheckpointError(f"{path}: corrupt header: {e}") from None
    base = 16 + n
    tensors = {}
    for e in header["tensors"]:
        count = int(np.prod(e["shape"]))
        start = base + e["offset"]
        if start + 8 * count > len(buf):
            raise CheckpointError(f"{path}: truncated payload for {e['name']} at offset {start}")
        tensors[e["name"]] = (
            np.frombuffer(buf, dtype="<f8", count=count, offset=start).reshape(e["shape"]).copy()
        )
    return tensors, header


def layer_tensors(prefix, arrays):
    return {f"{prefix}{l}": a for l, a in enumerate(arrays)}


def unpack_layers(tensors, prefix):
    out, l = [], 0
    while f"{prefix}{l}" in tensors:
        out.append(tensors[f"{prefix}{l}"])
        l += 1
    return out
