"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"GTCKPT\\0\\0"            magic
    u32 format version
    u32 header length, header (UTF-8 JSON, sorted keys)
    u32 block count
    per block: u32 name length, name, u32 ndim, u32 dims..., float64 values (<f8)
"""
import hashlib
import json
import struct

import numpy as np

from ..errors import CheckpointError, MissingCheckpoint, VocabularyMismatch

MAGIC = b"GTCKPT\0\0"
FORMAT_VERSION = 1


def encode_checkpoint(blocks, header):
    """blocks: iterable of (name, ndarray)."""
    head = dict(header)
    head["format_version"] = FORMAT_VERSION
    hb = json.dumps(head, sort_keys=True, separators=(",", ":")).encode()
    blocks = list(blocks)
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(hb)), hb, struct.pack("<I", len(blocks))]
    for name, arr in blocks:
        arr = np.asarray(arr, dtype="<f8")
        nb = name.encode()
        parts.append(struct.pack("<I", len(nb)) + nb)
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def decode_checkpoint(buf):
    if buf[:8] != MAGIC:
        raise CheckpointError("not a groundtalk checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<II", buf, 8)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format version {version}")
    off = 16
    header = json.loads(buf[off : off + hlen].decode())
    off += hlen
    (count,) = struct.unpack_from("<I", buf, off)
    off += 4
    blocks = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", buf, off)
        off += 4
        name = buf[off : off + nlen].decode()
        off += nlen
        (ndim,) = struct.unpack_from("<I", buf, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", buf, off)
        off += 4 * ndim
        size = int(np.prod(shape, dtype=np.int64))
        blocks[name] = np.frombuffer(buf, dtype="<f8", count=size, offset=off).reshape(shape).astype(np.float64)
        off += 8 * size
    if off != len(buf):
        raise CheckpointError("trailing bytes in checkpoint")
    return header, blocks


def save_checkpoint(path, blocks, header):
    data = encode_checkpoint(blocks, header)
    with open(path, "wb") as fh:
        fh.write(data)
    return hashlib.sha256(data).hexdigest()


def load_checkpoint(path, expect_vocab_hash=None):
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except FileNotFoundError:
        raise MissingCheckpoint(f"checkpoint not found: {path}") from None
    header, blocks = decode_checkpoint(buf)
    if expect_vocab_hash is not None and header.get("vocab_hash") != expect_vocab_hash:
        raise VocabularyMismatch(
            f"{path}: vocabulary hash {header.get('vocab_hash')} does not match expected {expect_vocab_hash}"
        )
    return header, blocks


def file_digest(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()
