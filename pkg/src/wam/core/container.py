"""Deterministic binary container for named arrays plus a JSON header.

Layout::

    b"WAMCKPT\n" | uint64 little-endian header length | header JSON | raw blobs

The header lists each array's dtype, shape and byte offset. Arrays are written
in sorted name order and no timestamps are stored, so identical content gives
identical bytes.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

MAGIC = b"WAMCKPT\n"
FORMAT_VERSION = 1


class ContainerError(ValueError):
    pass


def write_container(path: str | Path, meta: dict[str, Any], arrays: dict[str, np.ndarray]) -> None:
    entries = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        arr = np.asarray(arrays[name], order="C")
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = arr.tobytes()
        entries.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {"version": FORMAT_VERSION, "meta": meta, "tensors": entries}
    encoded = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(encoded)))
        fh.write(encoded)
        for raw in blobs:
            fh.write(raw)


def read_container(path: str | Path) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise ContainerError(f"{path}: not a WAM container (bad magic)")
    (length,) = struct.unpack_from("<Q", data, len(MAGIC))
    start = len(MAGIC) + 8
    header = json.loads(data[start:start + length].decode("utf-8"))
    if header.get("version") != FORMAT_VERSION:
        raise ContainerError(f"{path}: unsupported container version {header.get('version')}")
    base = start + length
    arrays = {}
    for entry in header["tensors"]:
        lo = base + entry["offset"]
        arr = np.frombuffer(data[lo:lo + entry["nbytes"]], dtype=np.dtype(entry["dtype"]))
        arrays[entry["name"]] = np.reshape(arr, tuple(entry["shape"])).copy()
    return header["meta"], arrays
