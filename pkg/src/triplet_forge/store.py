"""Binary artifact persistence.

Every binary artifact starts with a fixed header::

    magic      7 bytes   ASCII tag, NUL padded (TFSPEC1, TFTRIP1, TFCKPT1, TFEMB1)
    version    u32
    length     u64       payload size in bytes
    checksum   u64       FNV-1a 64 over the payload only

All integers and floats are little-endian. Manifests are JSON Lines.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

from .errors import (
    ArtifactError,
    ChecksumError,
    MissingArtifactError,
    TruncatedArtifactError,
    UnknownFormatError,
)

FORMAT_VERSION = 1

SPEC_MAGIC = b"TFSPEC1"
TRIPLET_MAGIC = b"TFTRIP1"
CHECKPOINT_MAGIC = b"TFCKPT1"
EMBEDDING_MAGIC = b"TFEMB1"

_HEADER = struct.Struct("<7sIQQ")

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


@numba.njit(cache=True)
def _fnv1a_kernel(data, h):
    prime = np.uint64(FNV_PRIME)
    for b in data:
        h ^= np.uint64(b)
        h *= prime
    return h


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash of ``data``."""
    buf = np.frombuffer(data, dtype=np.uint8)
    return int(_fnv1a_kernel(buf, np.uint64(FNV_OFFSET)))


@dataclass(frozen=True)
class ArtifactHeader:
    magic: bytes
    version: int
    length: int
    checksum: int


def pack_artifact(magic: bytes, payload: bytes, version: int = FORMAT_VERSION) -> bytes:
    tag = magic.ljust(7, b"\0")
    return _HEADER.pack(tag, version, len(payload), fnv1a64(payload)) + payload


def unpack_artifact(blob: bytes, magic: bytes) -> tuple[ArtifactHeader, bytes]:
    if len(blob) < _HEADER.size:
        raise TruncatedArtifactError(f"artifact shorter than its {_HEADER.size}-byte header")
    tag, version, length, checksum = _HEADER.unpack_from(blob)
    if tag != magic.ljust(7, b"\0"):
        raise UnknownFormatError(f"bad magic {tag!r}, expected {magic!r}")
    if version != FORMAT_VERSION:
        raise UnknownFormatError(f"unsupported {magic.decode()} version {version}")
    payload = blob[_HEADER.size:]
    if len(payload) < length:
        raise TruncatedArtifactError(
            f"{magic.decode()} payload truncated: {len(payload)} of {length} bytes"
        )
    if len(payload) > length:
        raise ArtifactError(f"{magic.decode()} has {len(payload) - length} trailing bytes")
    if fnv1a64(payload) != checksum:
        raise ChecksumError(f"{magic.decode()} payload checksum mismatch")
    return ArtifactHeader(magic, version, length, checksum), payload


def _write(path, blob):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)


def _read(path, producer):
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(path, producer)
    return path.read_bytes()


class _Reader:
    """Sequential little-endian cursor over a payload."""

    def __init__(self, payload: bytes):
        self.buf = payload
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise TruncatedArtifactError("payload ends mid-record")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        s = struct.Struct("<" + fmt)
        return s.unpack(self.take(s.size))

    def array(self, dtype, count):
        dtype = np.dtype(dtype)
        return np.frombuffer(self.take(dtype.itemsize * count), dtype=dtype).copy()

    def done(self):
        if self.pos != len(self.buf):
            raise ArtifactError(f"{len(self.buf) - self.pos} unread payload bytes")


# -- feature shards ---------------------------------------------------------

def encode_spectrogram(cells, frame_hop_s: float) -> bytes:
    cells = np.ascontiguousarray(cells, dtype="<f4")
    if cells.ndim != 2:
        raise ValueError("spectrogram must be a 2-D channel x frame matrix")
    n_ch, n_frames = cells.shape
    payload = struct.pack("<IId", n_ch, n_frames, frame_hop_s) + cells.tobytes()
    return pack_artifact(SPEC_MAGIC, payload)


def decode_spectrogram(blob: bytes):
    _, payload = unpack_artifact(blob, SPEC_MAGIC)
    r = _Reader(payload)
    n_ch, n_frames, hop = r.unpack("IId")
    cells = r.array("<f4", n_ch * n_frames).reshape(n_ch, n_frames)
    r.done()
    return cells, hop


def write_spectrogram(path, cells, frame_hop_s):
    _write(path, encode_spectrogram(cells, frame_hop_s))


def read_spectrogram(path):
    return decode_spectrogram(_read(path, "featurize"))


# -- triplet shards ---------------------------------------------------------

TRIPLET_RECORD = np.dtype([
    ("source", "u1"),
    ("transform_seed", "<u8"),
    ("anchor", "<u4", (2,)),
    ("positive", "<u4", (2,)),
    ("negative", "<u4", (2,)),
    ("params", "<f4", (4,)),
])


def encode_triplets(records: np.ndarray) -> bytes:
    records = np.ascontiguousarray(records, dtype=TRIPLET_RECORD)
    return pack_artifact(TRIPLET_MAGIC, struct.pack("<I", len(records)) + records.tobytes())


def decode_triplets(blob: bytes) -> np.ndarray:
    _, payload = unpack_artifact(blob, TRIPLET_MAGIC)
    r = _Reader(payload)
    (count,) = r.unpack("I")
    records = np.frombuffer(r.take(TRIPLET_RECORD.itemsize * count), dtype=TRIPLET_RECORD).copy()
    r.done()
    return records


def write_triplet_records(path, records):
    _write(path, encode_triplets(records))


def read_triplet_records(path):
    return decode_triplets(_read(path, "sample-triplets"))


# -- checkpoints ------------------------------------------------------------

def encode_checkpoint(spec: dict, params: list[tuple[str, np.ndarray]], optimizer: dict | None = None) -> bytes:
    """Serialize a model spec, named parameters and optional Adam state.

    ``optimizer`` holds ``step``, ``learning_rate``, ``beta1``, ``beta2``,
    ``eps`` and per-parameter ``m``/``v`` lists in the same order as ``params``.
    """
    parts = []
    spec_bytes = json.dumps(spec, sort_keys=True).encode()
    parts.append(struct.pack("<I", len(spec_bytes)) + spec_bytes)
    parts.append(struct.pack("<I", len(params)))
    for name, value in params:
        name_b = name.encode()
        value = np.require(value, dtype="<f4", requirements="C")
        parts.append(struct.pack("<I", len(name_b)) + name_b)
        parts.append(struct.pack("<I", value.ndim) + struct.pack(f"<{value.ndim}I", *value.shape))
        parts.append(value.tobytes())
    if optimizer is None:
        parts.append(b"\0")
    else:
        parts.append(b"\1")
        parts.append(struct.pack(
            "<Qdddd", optimizer["step"], optimizer["learning_rate"],
            optimizer["beta1"], optimizer["beta2"], optimizer["eps"],
        ))
        for key in ("m", "v"):
            for arr in optimizer[key]:
                parts.append(np.require(arr, dtype="<f4", requirements="C").tobytes())
    return pack_artifact(CHECKPOINT_MAGIC, b"".join(parts))


def decode_checkpoint(blob: bytes, load_optimizer: bool = True):
    _, payload = unpack_artifact(blob, CHECKPOINT_MAGIC)
    r = _Reader(payload)
    (n,) = r.unpack("I")
    spec = json.loads(r.take(n).decode())
    (count,) = r.unpack("I")
    params = []
    for _ in range(count):
        (n,) = r.unpack("I")
        name = r.take(n).decode()
        (ndim,) = r.unpack("I")
        shape = r.unpack(f"{ndim}I") if ndim else ()
        params.append((name, r.array("<f4", int(np.prod(shape))).reshape(shape)))
    (flag,) = r.unpack("B")
    optimizer = None
    if flag:
        step, lr, b1, b2, eps = r.unpack("Qdddd")
        moments = {}
        for key in ("m", "v"):
            moments[key] = [r.array("<f4", p.size).reshape(p.shape) for _, p in params]
        if load_optimizer:
            optimizer = dict(step=step, learning_rate=lr, beta1=b1, beta2=b2, eps=eps, **moments)
    r.done()
    return spec, params, optimizer


def write_checkpoint(path, spec, params, optimizer=None):
    _write(path, encode_checkpoint(spec, params, optimizer))


def read_checkpoint(path, load_optimizer=True):
    return decode_checkpoint(_read(path, "train"), load_optimizer)


# -- embedding stores -------------------------------------------------------

def encode_embeddings(ids, vectors) -> bytes:
    ids = np.asarray(ids, dtype="<u8").reshape(-1)
    vectors = np.asarray(vectors, dtype="<f4")
    if vectors.ndim != 2 or len(vectors) != len(ids):
        raise ValueError("vectors must be (count, d) and match ids")
    d = vectors.shape[1]
    rows = np.empty(len(ids), dtype=[("id", "<u8"), ("vec", "<f4", (d,))])
    rows["id"] = ids
    rows["vec"] = vectors
    return pack_artifact(EMBEDDING_MAGIC, struct.pack("<IQ", d, len(ids)) + rows.tobytes())


def decode_embeddings(blob: bytes):
    _, payload = unpack_artifact(blob, EMBEDDING_MAGIC)
    r = _Reader(payload)
    d, count = r.unpack("IQ")
    dtype = np.dtype([("id", "<u8"), ("vec", "<f4", (d,))])
    rows = np.frombuffer(r.take(dtype.itemsize * count), dtype=dtype)
    r.done()
    return rows["id"].copy(), rows["vec"].reshape(count, d).copy()


def write_embeddings(path, ids, vectors):
    _write(path, encode_embeddings(ids, vectors))


def read_embeddings(path):
    return decode_embeddings(_read(path, "embed"))


# -- manifests --------------------------------------------------------------

def write_jsonl(path, records):
    lines = [json.dumps(rec, sort_keys=True) for rec in records]
    _write(path, ("\n".join(lines) + "\n").encode() if lines else b"")


def read_jsonl(path, producer="gen-corpus"):
    text = _read(path, producer).decode()
    return [json.loads(line) for line in text.splitlines() if line.strip()]
