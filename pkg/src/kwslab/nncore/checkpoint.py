"""Single-file checkpoint format: named arrays behind a JSON index.

Layout: 8-byte magic, little-endian uint64 header length, UTF-8 JSON header,
then the raw array bytes. The header lists (name, shape, dtype, offset)
per array — offsets are relative to the data section — plus an arbitrary
``meta`` dict for callers (model config, hashes, ...). Arrays are stored
sorted by name so identical contents always produce identical files.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from ..errors import CheckpointError

_MAGIC = b"KWSARRS1"


def save_arrays(path: str, arrays: dict[str, np.ndarray], meta: dict | None = None):
    index = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        arr = arr.astype(arr.dtype.newbyteorder("<"))
        blob = arr.tobytes()
        index.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "dtype": arr.dtype.str,
                "offset": offset,
                "nbytes": len(blob),
            }
        )
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps(
        {"arrays": index, "meta": meta or {}}, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_arrays(path: str):
    """Returns (arrays dict, meta dict)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        data = fh.read()
    arrays = {}
    for entry in header["arrays"]:
        blob = data[entry["offset"] : entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(blob, dtype=np.dtype(entry["dtype"]))
        arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return arrays, header.get("meta", {})
