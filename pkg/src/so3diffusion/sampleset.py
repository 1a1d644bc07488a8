"""Sample-set container and its on-disk formats.

Binary layout (integers and floats little-endian):

    bytes 0-7    magic b"SO3SAMP\\x00"
    bytes 8-11   format version (uint32, currently 1)
    bytes 12-19  sample count (uint64)
    bytes 20-23  context dimension (uint32)
    bytes 24-31  provenance seed (int64, -1 when unknown)
    bytes 32-33  label length L (uint16)
    next L       label (UTF-8)
    rows         count x (4 + context_dim) float64: quaternion (a, b, c, d)
                 on the canonical hemisphere a >= 0, then context entries

The text export is tab-delimited with '#'-prefixed header lines carrying the
same fields; floats are written with repr-level precision so text round
trips are exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import so3
from .errors import FileFormatError, ShapeMismatch, VersionMismatch

SAMPLESET_MAGIC = b"SO3SAMP\x00"
SAMPLESET_VERSION = 1


@dataclass
class SampleSet:
    """Rotations with optional aligned per-sample context vectors."""

    rotations: np.ndarray
    contexts: np.ndarray | None = None
    label: str = ""
    seed: int = -1

    def __post_init__(self):
        self.rotations = np.asarray(self.rotations, dtype=float)
        if self.rotations.ndim != 3 or self.rotations.shape[1:] != (3, 3):
            raise ShapeMismatch("rotations must have shape (n, 3, 3)")
        if self.contexts is not None:
            self.contexts = np.asarray(self.contexts, dtype=float)
            if self.contexts.ndim != 2 or self.contexts.shape[0] != len(self):
                raise ShapeMismatch("contexts must have shape (n, d)")

    def __len__(self) -> int:
        return self.rotations.shape[0]

    @property
    def context_dim(self) -> int:
        return 0 if self.contexts is None else self.contexts.shape[1]


def _rows(samples: SampleSet) -> np.ndarray:
    quats = so3.to_quaternion(samples.rotations)
    if samples.contexts is not None:
        return np.concatenate([quats, samples.contexts], axis=1)
    return quats


def save_sample_set(path, samples: SampleSet) -> None:
    """Write the binary sample-set format described in the module docstring."""
    rows = _rows(samples)
    label = samples.label.encode("utf-8")
    if len(label) > 0xFFFF:
        raise ValueError("label longer than 65535 bytes")
    with open(path, "wb") as fh:
        fh.write(SAMPLESET_MAGIC)
        fh.write(
            struct.pack(
                "<IQIqH",
                SAMPLESET_VERSION,
                len(samples),
                samples.context_dim,
                int(samples.seed),
                len(label),
            )
        )
        fh.write(label)
        fh.write(np.ascontiguousarray(rows, dtype="<f8").tobytes())


def _from_rows(rows: np.ndarray, context_dim: int, label: str, seed: int) -> SampleSet:
    quats = rows[:, :4]
    norms = np.linalg.norm(quats, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise FileFormatError("stored quaternion rows are not unit length")
    contexts = rows[:, 4:] if context_dim else None
    return SampleSet(
        rotations=so3.from_quaternion(quats),
        contexts=contexts,
        label=label,
        seed=seed,
    )


def load_sample_set(path) -> SampleSet:
    """Read the binary sample-set format, validating magic and layout.

    Raises:
        FileFormatError: wrong magic, truncation, or invalid rows; messages
            carry the byte offset of the problem.
        VersionMismatch: unsupported format version.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 34:
        raise FileFormatError(f"truncated header: {len(blob)} bytes, need >= 34")
    if blob[:8] != SAMPLESET_MAGIC:
        raise FileFormatError(f"bad magic at byte 0: {blob[:8]!r}")
    version, count, context_dim, seed, llen = struct.unpack("<IQIqH", blob[8:34])
    if version != SAMPLESET_VERSION:
        raise VersionMismatch(
            f"sample-set version {version} unsupported (expected {SAMPLESET_VERSION})"
        )
    off = 34
    label = blob[off : off + llen].decode("utf-8")
    off += llen
    width = 4 + context_dim
    nbytes = count * width * 8
    body = blob[off : off + nbytes]
    if len(body) != nbytes:
        raise FileFormatError(
            f"truncated rows at byte {off}: need {nbytes} bytes, have {len(body)}"
        )
    if len(blob) != off + nbytes:
        raise FileFormatError(f"trailing garbage at byte {off + nbytes}")
    rows = np.frombuffer(body, dtype="<f8").reshape(count, width).astype(float)
    return _from_rows(rows, context_dim, label, seed)


def save_sample_set_text(path, samples: SampleSet) -> None:
    """Tab-delimited export with '#' header lines; exact float round trip."""
    rows = _rows(samples)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# so3diffusion sample-set text v1\n")
        fh.write(f"# count={len(samples)}\n")
        fh.write(f"# context_dim={samples.context_dim}\n")
        fh.write(f"# seed={int(samples.seed)}\n")
        fh.write(f"# label={samples.label}\n")
        for row in rows:
            fh.write("\t".join(repr(float(v)) for v in row) + "\n")


def load_sample_set_text(path) -> SampleSet:
    """Read the tab-delimited export produced by save_sample_set_text."""
    header: dict[str, str] = {}
    data = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    key, val = body.split("=", 1)
                    header[key.strip()] = val
                continue
            try:
                data.append([float(v) for v in line.split("\t")])
            except ValueError as exc:
                raise FileFormatError(f"bad numeric row at line {lineno}: {exc}")
    for key in ("count", "context_dim", "seed"):
        if key not in header:
            raise FileFormatError(f"missing '# {key}=' header line")
    count = int(header["count"])
    context_dim = int(header["context_dim"])
    if len(data) != count:
        raise FileFormatError(f"declared {count} rows, found {len(data)}")
    rows = np.asarray(data, dtype=float).reshape(count, 4 + context_dim)
    return _from_rows(rows, context_dim, header.get("label", ""), int(header["seed"]))
