"""Binary tensor/clip formats and the model checkpoint container.

STNT tensor: magic ``STNT``, version byte, rank byte, extents as u32
little-endian, payload as little-endian float32, row-major.

STNV clip: magic ``STNV``, version byte, four u32 little-endian extents
(3, T, H, W), float32 little-endian payload.

Checkpoint: one JSON header line (model kind, config, seed, tensor names,
optional extras) followed by the named tensors as concatenated STNT blobs in
header order. All writes go through a temp-file + rename so readers never
see partial files.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path
from typing import BinaryIO

import numpy as np

TENSOR_MAGIC = b"STNT"
CLIP_MAGIC = b"STNV"
FORMAT_VERSION = 1


class FormatError(ValueError):
    """Malformed or truncated binary payload."""


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def tensor_to_bytes(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr, dtype="<f4")
    if arr.ndim > 0:
        arr = np.ascontiguousarray(arr)
    if arr.ndim > 255:
        raise FormatError(f"rank {arr.ndim} exceeds format limit")
    header = TENSOR_MAGIC + bytes([FORMAT_VERSION, arr.ndim])
    header += b"".join(struct.pack("<I", e) for e in arr.shape)
    return header + arr.tobytes()


def read_tensor(stream: BinaryIO) -> np.ndarray:
    head = stream.read(6)
    if len(head) < 6 or head[:4] != TENSOR_MAGIC:
        raise FormatError("bad tensor magic")
    version, rank = head[4], head[5]
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported tensor format version {version}")
    raw = stream.read(4 * rank)
    if len(raw) < 4 * rank:
        raise FormatError("truncated tensor extents")
    shape = struct.unpack(f"<{rank}I", raw) if rank else ()
    count = int(np.prod(shape)) if shape else 1
    payload = stream.read(4 * count)
    if len(payload) < 4 * count:
        raise FormatError("truncated tensor payload")
    return np.frombuffer(payload, dtype="<f4").reshape(shape).copy()


def save_tensor(path, arr: np.ndarray) -> None:
    atomic_write_bytes(path, tensor_to_bytes(arr))


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        return read_tensor(f)


def clip_to_bytes(clip: np.ndarray) -> bytes:
    if clip.ndim != 4 or clip.shape[0] != 3:
        raise FormatError(f"clip must have shape (3,T,H,W), got {clip.shape}")
    clip = np.ascontiguousarray(clip, dtype="<f4")
    header = CLIP_MAGIC + bytes([FORMAT_VERSION])
    header += struct.pack("<4I", *clip.shape)
    return header + clip.tobytes()


def save_clip(path, clip: np.ndarray) -> None:
    atomic_write_bytes(path, clip_to_bytes(clip))


def read_clip_header(stream: BinaryIO) -> tuple:
    head = stream.read(5)
    if len(head) < 5 or head[:4] != CLIP_MAGIC:
        raise FormatError("bad clip magic")
    if head[4] != FORMAT_VERSION:
        raise FormatError(f"unsupported clip format version {head[4]}")
    raw = stream.read(16)
    if len(raw) < 16:
        raise FormatError("truncated clip extents")
    return struct.unpack("<4I", raw)


def load_clip(path) -> np.ndarray:
    with open(path, "rb") as f:
        shape = read_clip_header(f)
        count = int(np.prod(shape))
        payload = f.read(4 * count)
        if len(payload) < 4 * count:
            raise FormatError("truncated clip payload")
        return np.frombuffer(payload, dtype="<f4").reshape(shape).copy()


def peek_clip_shape(path) -> tuple:
    with open(path, "rb") as f:
        return read_clip_header(f)


def save_checkpoint(path, model_kind: str, config: dict, seed: int,
                    tensors: dict, extras: dict | None = None) -> None:
    names = list(tensors.keys())
    header = {
        "format": "framegrad-checkpoint",
        "version": FORMAT_VERSION,
        "model_kind": model_kind,
        "config": config,
        "seed": seed,
        "tensors": names,
        "extras": extras or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8") + b"\n"
    blob += b"".join(tensor_to_bytes(tensors[n]) for n in names)
    atomic_write_bytes(path, blob)


def load_checkpoint(path) -> dict:
    with open(path, "rb") as f:
        line = f.readline()
        try:
            header = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise FormatError(f"bad checkpoint header: {e}") from e
        if header.get("format") != "framegrad-checkpoint":
            raise FormatError("not a framegrad checkpoint")
        if header.get("version") != FORMAT_VERSION:
            raise FormatError(f"unsupported checkpoint version {header.get('version')}")
        tensors = {name: read_tensor(f) for name in header["tensors"]}
    header["tensor_data"] = tensors
    return header
