"""Binary checkpoint files: a JSON header plus named float32 tensors.

Layout: 8-byte magic, little-endian uint64 header length, UTF-8 JSON
header, then each tensor's raw little-endian float32 data in header order.
The header is readable without touching the tensor section, and
save -> load -> save reproduces the file byte for byte.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"UBMCKPT1"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    header = {
        "format_version": FORMAT_VERSION,
        "meta": meta,
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in arrays.items()],
    }
    blob = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for a in arrays.values():
            fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def _read_header(fh) -> dict:
    if fh.read(len(MAGIC)) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (length,) = struct.unpack("<Q", fh.read(8))
    header = json.loads(fh.read(length).decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {header.get('format_version')}")
    return header


def read_checkpoint_meta(path) -> dict:
    """Header metadata only; tensor bytes are never read."""
    with open(path, "rb") as fh:
        return _read_header(fh)["meta"]


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        header = _read_header(fh)
        arrays: dict[str, np.ndarray] = {}
        for spec in header["tensors"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 4)
            if len(raw) != count * 4:
                raise CheckpointError(f"truncated tensor section at {spec['name']}")
            arrays[spec["name"]] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    return header["meta"], arrays


def checkpoint_exists(path) -> bool:
    return Path(path).is_file()
