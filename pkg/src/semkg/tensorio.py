"""Flat binary container for named tensors, plus JSON manifests.

Layout: an 8-byte magic, a little-endian uint32 tensor count, then per
tensor a uint16 name length, the UTF-8 name, a uint8 rank, the dims as
little-endian uint32, and the data as little-endian float32 in C order.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"SEMKGNT1"


def save_tensors(path: str, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            data = np.ascontiguousarray(arr, dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(data.tobytes())


def load_tensors(path: str) -> dict[str, np.ndarray]:
    """Read a container back as float64 arrays (compute precision)."""
    tensors: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path} is not a named-tensor container")
        (count,) = struct.unpack("<I", fh.read(4))
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            n_items = int(np.prod(shape)) if ndim else 1
            raw = fh.read(4 * n_items)
            arr = np.frombuffer(raw, dtype="<f4").reshape(shape)
            tensors[name] = arr.astype(np.float64)
    return tensors


def save_manifest(path: str, manifest: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
