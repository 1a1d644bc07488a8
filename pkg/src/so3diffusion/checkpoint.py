"""Versioned, checksummed binary records for checkpoints.

Layout (all integers little-endian):

    bytes 0-7    magic b"SO3CKPT\\x00"
    bytes 8-11   format version (uint32)
    bytes 12-15  CRC32 of the payload (uint32)
    bytes 16-19  payload length (uint32)
    payload      uint32 header length, JSON header (UTF-8, sorted keys),
                 then the raw bytes of each declared array in order
                 (C-contiguous, little-endian)

The JSON header carries a free-form "meta" object and an "arrays" manifest
of {name, shape, dtype} entries. Writing is byte-deterministic for equal
content, so save/load/save round trips are byte-identical.
"""

from __future__ import annotations

import json
import struct
import zlib
from collections import OrderedDict

import numpy as np

from .errors import ChecksumError, FileFormatError, VersionMismatch

CHECKPOINT_MAGIC = b"SO3CKPT\x00"
CHECKPOINT_VERSION = 1


def _encode(meta: dict, arrays: "OrderedDict[str, np.ndarray]") -> bytes:
    manifest = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.asarray(arr)  # astype below copies C-contiguously; 0-d shapes survive
        if arr.dtype == np.float64:
            dtype = "<f8"
        elif arr.dtype == np.int64:
            dtype = "<i8"
        else:
            arr = arr.astype(np.float64)
            dtype = "<f8"
        manifest.append({"name": name, "shape": list(arr.shape), "dtype": dtype})
        blobs.append(arr.astype(dtype).tobytes())
    header = json.dumps(
        {"meta": meta, "arrays": manifest}, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    return struct.pack("<I", len(header)) + header + b"".join(blobs)


def save_checkpoint(path, meta: dict, arrays: "OrderedDict[str, np.ndarray]") -> None:
    """Write a checkpoint record; see the module docstring for the layout."""
    payload = _encode(meta, arrays)
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<III", CHECKPOINT_VERSION, crc, len(payload)))
        fh.write(payload)


def load_checkpoint(path) -> tuple[dict, "OrderedDict[str, np.ndarray]"]:
    """Read a checkpoint record, verifying magic, version, and CRC32.

    Raises:
        FileFormatError: truncated file or wrong magic (message includes the
            byte offset of the problem).
        VersionMismatch: unsupported format version.
        ChecksumError: payload does not match the stored CRC32.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 20:
        raise FileFormatError(f"truncated record: {len(blob)} bytes, need >= 20")
    if blob[:8] != CHECKPOINT_MAGIC:
        raise FileFormatError(f"bad magic at byte 0: {blob[:8]!r}")
    version, crc, length = struct.unpack("<III", blob[8:20])
    if version != CHECKPOINT_VERSION:
        raise VersionMismatch(
            f"checkpoint version {version} unsupported (expected {CHECKPOINT_VERSION})"
        )
    payload = blob[20 : 20 + length]
    if len(payload) != length:
        raise FileFormatError(
            f"truncated payload at byte {len(blob)}: declared {length} bytes"
        )
    if (zlib.crc32(payload) & 0xFFFFFFFF) != crc:
        raise ChecksumError("payload CRC32 mismatch; file is corrupted")
    (hlen,) = struct.unpack("<I", payload[:4])
    try:
        header = json.loads(payload[4 : 4 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FileFormatError(f"unreadable JSON header at byte 24: {exc}") from exc
    arrays: "OrderedDict[str, np.ndarray]" = OrderedDict()
    offset = 4 + hlen
    for entry in header["arrays"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = count * 8
        chunk = payload[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise FileFormatError(
                f"array {entry['name']!r} truncated at payload byte {offset}"
            )
        arr = np.frombuffer(chunk, dtype=entry["dtype"]).reshape(entry["shape"])
        arrays[entry["name"]] = arr.astype(entry["dtype"].replace("<", "="))
        offset += nbytes
    return header["meta"], arrays
