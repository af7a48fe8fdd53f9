"""Binary checkpoints: the RKPT format.

Layout, all integers little-endian:

    magic "RKPT" | format version u32 | parameter count u32
    parameter records ...
    optimizer records (names prefixed "opt.") ...
    FNV-1a 64-bit checksum (u64) of every preceding byte

Each record: name length u16, UTF-8 name, rank u8, one u64 per dim,
dtype tag u8 (0 = f64, 1 = f32), then the raw little-endian IEEE-754
payload. No native padding anywhere, so files written on any platform
load on any other, and save -> load -> save is byte-identical.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import CheckpointError

MAGIC = b"RKPT"
VERSION = 1

_DTYPE_TAGS = {0: "<f8", 1: "<f4"}


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def _encode_record(name: str, arr: np.ndarray) -> bytes:
    nb = name.encode("utf-8")
    if len(nb) > 0xFFFF:
        raise CheckpointError(f"parameter name too long: {name[:32]}...")
    if arr.dtype == np.float64:
        tag, fmt = 0, "<f8"
    elif arr.dtype == np.float32:
        tag, fmt = 1, "<f4"
    else:
        raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
    parts = [struct.pack("<H", len(nb)), nb, struct.pack("<B", arr.ndim)]
    parts += [struct.pack("<Q", d) for d in arr.shape]
    parts.append(struct.pack("<B", tag))
    parts.append(np.ascontiguousarray(arr, dtype=fmt).tobytes())
    return b"".join(parts)


def _decode_record(buf: bytes, pos: int) -> tuple[str, np.ndarray, int]:
    try:
        (nlen,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = struct.unpack_from("<B", buf, pos)
        pos += 1
        shape = struct.unpack_from("<" + "Q" * rank, buf, pos)
        pos += 8 * rank
        (tag,) = struct.unpack_from("<B", buf, pos)
        pos += 1
        if tag not in _DTYPE_TAGS:
            raise CheckpointError(f"unknown dtype tag {tag} in record {name!r}")
        dt = np.dtype(_DTYPE_TAGS[tag])
        count = int(np.prod(shape)) if rank else 1
        nbytes = count * dt.itemsize
        if pos + nbytes > len(buf):
            raise CheckpointError(f"record {name!r} payload overruns the file")
        arr = np.frombuffer(buf[pos:pos + nbytes], dtype=dt).reshape(shape).copy()
        pos += nbytes
    except struct.error as exc:
        raise CheckpointError(f"truncated record at offset {pos}") from exc
    return name, arr, pos


def save(path, params: dict[str, np.ndarray],
         opt_state: dict[str, np.ndarray] | None = None) -> None:
    """Write parameters (in dict order) plus an optimizer block."""
    body = bytearray()
    body += MAGIC
    body += struct.pack("<I", VERSION)
    body += struct.pack("<I", len(params))
    for name, arr in params.items():
        if name.startswith("opt."):
            raise CheckpointError(f"parameter name {name!r} collides with the opt. prefix")
        body += _encode_record(name, arr)
    for name, arr in (opt_state or {}).items():
        body += _encode_record("opt." + name, arr)
    body += struct.pack("<Q", fnv1a64(bytes(body)))
    with open(path, "wb") as fh:
        fh.write(bytes(body))


def load(path) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Read and verify a checkpoint; returns (params, optimizer records)."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 4 + 4 + 4 + 8:
        raise CheckpointError(f"file too short to be a checkpoint: {path}")
    body, tail = buf[:-8], buf[-8:]
    (stored,) = struct.unpack("<Q", tail)
    if fnv1a64(body) != stored:
        raise CheckpointError(f"checksum mismatch in {path}")
    if body[:4] != MAGIC:
        raise CheckpointError(f"bad magic in {path}")
    (version,) = struct.unpack_from("<I", body, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported format version {version}")
    (count,) = struct.unpack_from("<I", body, 8)
    pos = 12
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        name, arr, pos = _decode_record(body, pos)
        params[name] = arr
    opt_state: dict[str, np.ndarray] = {}
    while pos < len(body):
        name, arr, pos = _decode_record(body, pos)
        if not name.startswith("opt."):
            raise CheckpointError(
                f"trailing record {name!r} outside the optimizer block")
        opt_state[name[4:]] = arr
    return params, opt_state
