"""Binary checkpoint container.

Layout: magic ``RBBT``, u32 format version, then one record per parameter
in insertion order -- u32 name length, UTF-8 name bytes, u32 rank, extents
as u64 little-endian, values as float32 little-endian (C order), one frozen
flag byte. Records run to end of file.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

from .params import ParameterSet

__all__ = ["save_checkpoint", "load_checkpoint", "CheckpointError"]

MAGIC = b"RBBT"
VERSION = 1


class CheckpointError(RuntimeError):
    """Malformed or incompatible checkpoint payload."""


def checkpoint_bytes(params: ParameterSet) -> bytes:
    out = [MAGIC, struct.pack("<I", VERSION)]
    for name, t in params.items():
        nb = name.encode("utf-8")
        arr = np.ascontiguousarray(t.data, dtype="<f4")
        out.append(struct.pack("<I", len(nb)))
        out.append(nb)
        out.append(struct.pack("<I", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(arr.tobytes())
        out.append(struct.pack("<B", 1 if params.is_frozen(name) else 0))
    return b"".join(out)


def save_checkpoint(params: ParameterSet, path: str) -> None:
    """Write atomically: temp file in the target directory, then rename."""
    payload = checkpoint_bytes(params)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str, dtype=np.float32) -> ParameterSet:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    params = ParameterSet()
    off = 8
    frozen = []
    while off < len(blob):
        try:
            (nlen,) = struct.unpack_from("<I", blob, off)
            off += 4
            name = blob[off : off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<I", blob, off)
            off += 4
            shape = struct.unpack_from(f"<{rank}Q", blob, off)
            off += 8 * rank
            count = int(np.prod(shape)) if rank else 1
            values = np.frombuffer(blob, dtype="<f4", count=count, offset=off).reshape(shape)
            off += 4 * count
            flag = blob[off]
            off += 1
        except (struct.error, IndexError, ValueError) as exc:
            raise CheckpointError(f"{path}: truncated record at offset {off}") from exc
        params.add(name, values.astype(dtype))
        if flag:
            frozen.append(name)
    for name in frozen:
        params._frozen[name] = True
        params[name].requires_grad = False
    return params
