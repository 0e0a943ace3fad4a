"""Versioned little-endian binary checkpoints.

Layout::

    b"CASICKPT"  u32 version  u32 len + kind  32-byte config fingerprint
    u32 len + canonical config JSON   u64 iteration   5 x u64 rng state
    u32 array count, then per array:
        u16 len + name   u8 ndim   ndim x u32 dims   float64 LE payload
    32-byte SHA-256 of everything above
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"CASICKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class FingerprintMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def fingerprint(config: dict) -> bytes:
    return hashlib.sha256(canonical_json(config).encode()).digest()


@dataclass
class Checkpoint:
    kind: str
    config: dict
    fingerprint_config: dict
    iteration: int = 0
    rng_state: tuple[int, ...] = (0, 0, 0, 0, 0)
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def fingerprint(self) -> bytes:
        return fingerprint(self.fingerprint_config)

    def equals(self, other: "Checkpoint") -> bool:
        """Bit-exact equality of every field and array."""
        if (self.kind, self.iteration, tuple(self.rng_state)) != (other.kind, other.iteration, tuple(other.rng_state)):
            return False
        if canonical_json(self.config) != canonical_json(other.config):
            return False
        if canonical_json(self.fingerprint_config) != canonical_json(other.fingerprint_config):
            return False
        if list(self.arrays) != list(other.arrays):
            return False
        return all(
            a.shape == b.shape and a.astype("<f8").tobytes() == b.astype("<f8").tobytes()
            for a, b in zip(self.arrays.values(), other.arrays.values())
        )


def _pack_str(s: str, width: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<" + width, len(b)) + b


def to_bytes(ck: Checkpoint) -> bytes:
    meta = {"config": ck.config, "fingerprint_config": ck.fingerprint_config}
    parts = [
        MAGIC,
        struct.pack("<I", VERSION),
        _pack_str(ck.kind, "I"),
        ck.fingerprint,
        _pack_str(canonical_json(meta), "I"),
        struct.pack("<Q", ck.iteration),
        struct.pack("<5Q", *(int(v) for v in ck.rng_state)),
        struct.pack("<I", len(ck.arrays)),
    ]
    for name, arr in ck.arrays.items():
        a = np.asarray(arr, dtype="<f8")
        parts.append(_pack_str(name, "H"))
        parts.append(struct.pack("<B", a.ndim))
        parts.append(struct.pack(f"<{a.ndim}I", *a.shape))
        parts.append(np.ascontiguousarray(a).tobytes())
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedCheckpointError(f"truncated: need {n} bytes at offset {self.pos}, file has {len(self.buf)}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))

    def string(self, width: str) -> str:
        (n,) = self.unpack(width)
        return self.take(n).decode("utf-8")


def from_bytes(buf: bytes, expected_fingerprint: bytes | None = None) -> Checkpoint:
    r = _Reader(buf)
    if len(buf) < len(MAGIC):
        raise TruncatedCheckpointError("truncated: shorter than the magic")
    if r.take(len(MAGIC)) != MAGIC:
        raise BadMagicError("bad magic: not a checkpoint file")
    (version,) = r.unpack("I")
    if version != VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, expected {VERSION}")
    kind = r.string("I")
    fp = r.take(32)
    meta = json.loads(r.string("I"))
    (iteration,) = r.unpack("Q")
    rng_state = r.unpack("5Q")
    (count,) = r.unpack("I")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = r.string("H")
        (ndim,) = r.unpack("B")
        shape = r.unpack(f"{ndim}I")
        n = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(r.take(8 * n), dtype="<f8").astype(np.float64).reshape(shape)
    end = r.pos
    digest = r.take(32)
    if r.pos != len(buf):
        raise CorruptCheckpointError(f"{len(buf) - r.pos} trailing bytes")
    if hashlib.sha256(buf[:end]).digest() != digest:
        raise CorruptCheckpointError("checksum mismatch")
    ck = Checkpoint(kind, meta["config"], meta["fingerprint_config"], iteration, tuple(rng_state), arrays)
    if ck.fingerprint != fp:
        raise CorruptCheckpointError("stored fingerprint does not match stored config")
    if expected_fingerprint is not None and fp != expected_fingerprint:
        raise FingerprintMismatchError("config fingerprint differs from the checkpoint's")
    return ck


def save_checkpoint(ck: Checkpoint, path) -> None:
    """Atomic write: temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(to_bytes(ck))
    os.replace(tmp, path)


def load_checkpoint(path, expected_fingerprint: bytes | None = None) -> Checkpoint:
    return from_bytes(Path(path).read_bytes(), expected_fingerprint)
