"""Single-file checkpoint format.

Layout: 8-byte magic, u32 little-endian header length, JSON header (format
version, config echo, arbitrary metadata, block index), then the raw block
payload: named float64 little-endian arrays, concatenated in index order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import ContractViolation

MAGIC = b"RTWMCKPT"
FORMAT_VERSION = 1


def save_checkpoint(path, blocks: dict[str, np.ndarray], meta: dict) -> None:
    index = []
    payload = bytearray()
    for name, arr in blocks.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        index.append({"name": name, "shape": list(arr.shape), "offset": len(payload)})
        payload.extend(arr.tobytes())
    header = json.dumps({"format_version": FORMAT_VERSION, "meta": meta, "index": index},
                        sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(bytes(payload))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.exists():
        raise ContractViolation(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if raw[:8] != MAGIC:
        raise ContractViolation(f"not a checkpoint file: {path}")
    (hlen,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    if header["format_version"] != FORMAT_VERSION:
        raise ContractViolation(f"unsupported checkpoint version {header['format_version']}")
    payload = raw[12 + hlen:]
    blocks = {}
    for entry in header["index"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=start)
        blocks[entry["name"]] = arr.reshape(shape).astype(np.float64)
    return blocks, header["meta"]
