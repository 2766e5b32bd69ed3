"""Binary parameter container.

Layout (all integers little-endian)::

    8 bytes   magic  b"PFSMCKPT"
    4 bytes   uint32 format version
    8 bytes   uint64 manifest length N
    N bytes   UTF-8 JSON manifest
    ...       raw tensor bytes, concatenated in manifest order

The manifest holds ``{"version", "meta", "tensors": [{"name", "dtype",
"shape", "offset", "nbytes"}]}``; offsets are relative to the start of the
tensor block. Arrays are stored C-contiguous in little-endian byte order, so
a save/load round trip is bit-exact.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np
import torch

MAGIC = b"PFSMCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_arrays(path: str | Path, arrays: Mapping[str, np.ndarray], meta: dict | None = None) -> None:
    entries, blobs, offset = [], [], 0
    for name, arr in arrays.items():
        a = np.asarray(arr, order="C")  # keeps 0-d arrays 0-d, unlike ascontiguousarray
        a = a.astype(a.dtype.newbyteorder("<"), copy=False)
        raw = a.tobytes()
        entries.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape),
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    manifest = json.dumps({"version": VERSION, "meta": meta or {}, "tensors": entries},
                          sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for raw in blobs:
            fh.write(raw)


def load_arrays(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack_from("<I", data, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (n,) = struct.unpack_from("<Q", data, 12)
    manifest = json.loads(data[20:20 + n].decode("utf-8"))
    base = 20 + n
    arrays = {}
    for e in manifest["tensors"]:
        start = base + e["offset"]
        raw = data[start:start + e["nbytes"]]
        if len(raw) != e["nbytes"]:
            raise CheckpointError(f"{path}: truncated tensor {e['name']}")
        arrays[e["name"]] = np.frombuffer(raw, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return arrays, manifest["meta"]


def save_module(path: str | Path, module: torch.nn.Module, meta: dict | None = None) -> None:
    arrays = {k: v.detach().cpu().numpy() for k, v in module.state_dict().items()}
    save_arrays(path, arrays, meta)


def load_module(path: str | Path, module: torch.nn.Module) -> dict:
    arrays, meta = load_arrays(path)
    state = {k: torch.from_numpy(v) for k, v in arrays.items()}
    module.load_state_dict(state)
    return meta
