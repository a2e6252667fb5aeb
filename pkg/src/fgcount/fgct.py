"""Binary tensor file format used at every file boundary of the toolkit.

Layout (all integers little-endian):

    bytes 0-3   magic ``FGCT``
    u16         version (= 1)
    u8          dtype code (1 = float32)
    u8          ndim
    ndim x u32  dims (the numpy shape; 2-D grids are (height, width))
    payload     row-major little-endian float32 values

One file per channel. A per-image directory holds the channel files plus a
``sidecar.json`` naming the channels and recording generation parameters
(sigma, tau, downsample factor, method).
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"FGCT"
VERSION = 1
DTYPE_FLOAT32 = 1
SIDECAR_NAME = "sidecar.json"

_HEADER = struct.Struct("<4sHBB")


class FormatError(ValueError):
    """Raised when a tensor file does not match the format."""


def write_tensor(path: str | Path, array: np.ndarray) -> None:
    """Write one array as a float32 tensor file."""
    arr = np.ascontiguousarray(array, dtype="<f4")
    if arr.ndim < 1 or arr.ndim > 255:
        raise FormatError(f"unsupported ndim {arr.ndim}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, DTYPE_FLOAT32, arr.ndim))
        fh.write(np.asarray(arr.shape, dtype="<u4").tobytes())
        fh.write(arr.tobytes())


def read_tensor(path: str | Path) -> np.ndarray:
    """Read a tensor file back as a float32 array."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise FormatError(f"truncated header in {path}")
        magic, version, dtype, ndim = _HEADER.unpack(head)
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r} in {path}")
        if version != VERSION:
            raise FormatError(f"unsupported version {version} in {path}")
        if dtype != DTYPE_FLOAT32:
            raise FormatError(f"unsupported dtype code {dtype} in {path}")
        dims_raw = fh.read(4 * ndim)
        if len(dims_raw) < 4 * ndim:
            raise FormatError(f"truncated dims in {path}")
        shape = tuple(int(d) for d in np.frombuffer(dims_raw, dtype="<u4"))
        n = int(np.prod(shape, dtype=np.int64)) if shape else 0
        payload = fh.read(4 * n)
        if len(payload) < 4 * n:
            raise FormatError(f"truncated payload in {path}")
        if fh.read(1):
            raise FormatError(f"trailing bytes after payload in {path}")
        return np.frombuffer(payload, dtype="<f4").reshape(shape).copy()


def write_stack(image_dir: str | Path, channels: dict[str, np.ndarray],
                meta: dict) -> None:
    """Write a per-image stack: one tensor file per channel plus the sidecar.

    The sidecar is written last (atomically via rename), so its presence marks
    a complete stack.
    """
    image_dir = Path(image_dir)
    image_dir.mkdir(parents=True, exist_ok=True)
    for name, arr in channels.items():
        write_tensor(image_dir / f"{name}.fgct", arr)
    sidecar = dict(meta)
    sidecar["channels"] = sorted(channels)
    tmp = image_dir / (SIDECAR_NAME + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=None, separators=(",", ":"), sort_keys=True)
    os.replace(tmp, image_dir / SIDECAR_NAME)


def read_stack(image_dir: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a per-image stack written by write_stack: (channels, sidecar)."""
    image_dir = Path(image_dir)
    sidecar_path = image_dir / SIDECAR_NAME
    if not sidecar_path.exists():
        raise FormatError(f"no {SIDECAR_NAME} in {image_dir}")
    with open(sidecar_path, encoding="utf-8") as fh:
        meta = json.load(fh)
    channels = {
        name: read_tensor(image_dir / f"{name}.fgct")
        for name in meta.get("channels", [])
    }
    return channels, meta


def list_stacks(root: str | Path) -> dict[str, Path]:
    """Map image_id -> stack directory for every complete stack under root."""
    root = Path(root)
    out: dict[str, Path] = {}
    if not root.is_dir():
        return out
    for entry in sorted(root.iterdir()):
        if entry.is_dir() and (entry / SIDECAR_NAME).exists():
            with open(entry / SIDECAR_NAME, encoding="utf-8") as fh:
                meta = json.load(fh)
            out[meta.get("image_id", entry.name)] = entry
    return out
