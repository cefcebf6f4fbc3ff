"""Parameter checkpoint files.

Layout::

    b"PDCK"                      magic
    u32 little-endian            header length in bytes
    header                       UTF-8 JSON object
    buffers                      little-endian f64, row-major, concatenated

The header's ``"tensors"`` list gives ``name``, ``shape`` and ``length``
(element count) for each buffer, in file order.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"PDCK"


def save_checkpoint(path, header: dict, tensors: dict[str, np.ndarray]) -> None:
    """Write atomically (temp file in the same directory, then rename)."""
    path = Path(path)
    meta = dict(header)
    meta["tensors"] = [
        {"name": name, "shape": list(arr.shape), "length": int(arr.size)} for name, arr in tensors.items()
    ]
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            for arr in tensors.values():
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic at byte offset 0 (expected {MAGIC!r})")
    if len(raw) < 8:
        raise FormatError(f"{path}: truncated header length at byte offset 4")
    (hlen,) = struct.unpack_from("<I", raw, 4)
    try:
        header = json.loads(raw[8:8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable JSON header at byte offset 8: {exc}") from None
    offset = 8 + hlen
    tensors: dict[str, np.ndarray] = {}
    for entry in header.get("tensors", []):
        nbytes = 8 * entry["length"]
        if offset + nbytes > len(raw):
            raise FormatError(f"{path}: buffer {entry['name']!r} truncated at byte offset {offset}")
        arr = np.frombuffer(raw, dtype="<f8", count=entry["length"], offset=offset)
        tensors[entry["name"]] = arr.astype(np.float64).reshape(entry["shape"])
        offset += nbytes
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes at byte offset {offset}")
    return header, tensors
