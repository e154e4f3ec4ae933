"""Deterministic binary container for named arrays plus a JSON meta block.

Layout, all little-endian:

    bytes 0..4   magic b"QTNC" + version byte 0x01
    bytes 5..13  u64 length of the manifest
    manifest     UTF-8 JSON {"meta": {...}, "arrays": [[name, dtype, shape], ...]}
    payload      raw C-order array bytes, concatenated in manifest order

Arrays are stored sorted by name and the JSON uses sorted keys and fixed
separators, so saving the same content twice yields byte-identical
files. (Zip-based containers stamp modification times into the archive,
which breaks that property.)
"""

import json
import struct

import numpy as np

from .errors import ParseError, ValidationError

__all__ = ["save_arrays", "load_arrays"]

_MAGIC = b"QTNC\x01"


def save_arrays(path, arrays: dict, meta: dict | None = None) -> None:
    """Write named arrays and a small metadata dict to ``path``."""
    entries = []
    blobs = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        entries.append([name, arr.dtype.str, list(arr.shape)])
        blobs.append(arr.tobytes())
    manifest = json.dumps(
        {"meta": meta or {}, "arrays": entries},
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as handle:
        handle.write(_MAGIC)
        handle.write(struct.pack("<Q", len(manifest)))
        handle.write(manifest)
        for blob in blobs:
            handle.write(blob)


def load_arrays(path):
    """Read a container written by save_arrays; returns (arrays, meta)."""
    with open(path, "rb") as handle:
        magic = handle.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ParseError(f"{path}: not a checkpoint container (bad magic {magic!r})")
        (manifest_len,) = struct.unpack("<Q", handle.read(8))
        try:
            manifest = json.loads(handle.read(manifest_len).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ParseError(f"{path}: corrupt manifest: {exc}") from exc
        arrays = {}
        for name, dtype_str, shape in manifest["arrays"]:
            dtype = np.dtype(dtype_str)
            count = int(np.prod(shape)) if shape else 1
            raw = handle.read(count * dtype.itemsize)
            if len(raw) != count * dtype.itemsize:
                raise ParseError(f"{path}: truncated payload for array {name!r}")
            arrays[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
        trailing = handle.read(1)
        if trailing:
            raise ValidationError(f"{path}: unexpected trailing bytes")
    return arrays, manifest["meta"]
