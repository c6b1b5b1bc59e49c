"""Binary parameter checkpoints.

Layout (version 1), all integers little-endian::

    magic      8 bytes   b"HTKGCKPT"
    version    uint32
    count      uint32
    repeated `count` times:
        name_len  uint32, name  utf-8 bytes
        ndim      uint32, dims  ndim x uint64
        values    prod(dims) x float64 (little-endian, C order)

A JSON sidecar (``<path>.json``) carries configs and RNG state.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"HTKGCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_arrays(path: str | Path, arrays: Mapping[str, np.ndarray]) -> None:
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(arrays)))
        for name, arr in arrays.items():
            arr = np.array(arr, dtype="<f8", order="C")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes(order="C"))


def load_arrays(path: str | Path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    pos = 16
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos : pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<I", data, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}Q", data, pos)
            pos += 8 * ndim
            n = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(data, dtype="<f8", count=n, offset=pos).reshape(shape)
            pos += 8 * n
            if name in out:
                raise CheckpointError(f"{path}: duplicate entry {name!r}")
            out[name] = arr.astype(np.float64)
    except CheckpointError:
        raise
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"{path}: truncated checkpoint") from exc
    if pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - pos} trailing bytes")
    return out


def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def save_sidecar(path: str | Path, meta: Mapping) -> None:
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_sidecar(path: str | Path) -> dict:
    return json.loads(sidecar_path(path).read_text())
