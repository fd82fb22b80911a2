"""Binary checkpoint format.

Layout, all integers little-endian::

    b"SNNF"  u16 version
    u32 n  + n bytes   architecture JSON
    u32 n  + n bytes   metadata JSON
    u32 count of weights, then per weight:
        u16 n + name, u8 ndim, u32 * ndim dims, u64 element count, f32 * count
    u32 count of thresholds, then per threshold:
        u16 n + name, f64 value
    u32 CRC-32 of every preceding byte

Weights are stored as 32-bit floats, row-major. JSON is written with sorted
keys so that equal checkpoints are equal byte strings.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError
from .network import ArchitectureSpec, NetworkParams, check_params

MAGIC = b"SNNF"
VERSION = 1
PHASES = ("ann", "converted", "stdb")


@dataclass
class Checkpoint:
    arch: ArchitectureSpec
    params: NetworkParams
    metadata: dict = field(default_factory=dict)

    @property
    def phase(self) -> str:
        return self.metadata.get("phase", "ann")


def _json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def _name(name: str) -> bytes:
    raw = name.encode()
    return struct.pack("<H", len(raw)) + raw


def encode(ckpt: Checkpoint) -> bytes:
    phase = ckpt.metadata.get("phase")
    if phase is not None and phase not in PHASES:
        raise FormatError(f"unknown checkpoint phase {phase!r}; expected one of {PHASES}")
    check_params(ckpt.params, ckpt.arch)
    parts = [MAGIC, struct.pack("<H", VERSION)]
    for blob in (_json(ckpt.arch.to_dict()), _json(ckpt.metadata)):
        parts += [struct.pack("<I", len(blob)), blob]
    names = ckpt.arch.weight_names
    parts.append(struct.pack("<I", len(names)))
    for name in names:
        w = np.ascontiguousarray(ckpt.params.weights[name], dtype="<f4")
        parts += [_name(name), struct.pack("<B", w.ndim), struct.pack(f"<{w.ndim}I", *w.shape),
                  struct.pack("<Q", w.size), w.tobytes()]
    thresholds = ckpt.params.thresholds
    parts.append(struct.pack("<I", len(thresholds)))
    for name in sorted(thresholds, key=_population_order(ckpt.arch)):
        parts += [_name(name), struct.pack("<d", float(thresholds[name]))]
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def _population_order(arch: ArchitectureSpec):
    order = {p: i for i, p in enumerate(arch.populations)}
    return lambda name: (order.get(name, len(order)), name)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        end = self.pos + n
        if end > len(self.data):
            raise FormatError(f"checkpoint truncated while reading {what}: need {end} bytes, "
                              f"have {len(self.data)}")
        chunk = self.data[self.pos:end]
        self.pos = end
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def name(self, what: str) -> str:
        (n,) = self.unpack("<H", what)
        return self.take(n, what).decode()


def decode(data: bytes) -> Checkpoint:
    if data[:4] != MAGIC:
        raise FormatError(f"not a checkpoint: magic {data[:4]!r} != {MAGIC!r}")
    if len(data) < 10:
        raise FormatError(f"checkpoint truncated: only {len(data)} bytes")
    (version,) = struct.unpack("<H", data[4:6])
    if version != VERSION:
        raise FormatError(f"checkpoint format version {version} is not supported "
                          f"(this build reads version {VERSION})")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise FormatError("checkpoint checksum mismatch; file is corrupt or truncated")
    r = _Reader(body)
    r.pos = 6
    blobs = []
    for what in ("architecture", "metadata"):
        (n,) = r.unpack("<I", what)
        blobs.append(json.loads(r.take(n, what)))
    arch = ArchitectureSpec.from_dict(blobs[0])
    weights = {}
    (count,) = r.unpack("<I", "weight count")
    for _ in range(count):
        name = r.name("weight name")
        (ndim,) = r.unpack("<B", f"rank of {name}")
        dims = r.unpack(f"<{ndim}I", f"shape of {name}")
        (size,) = r.unpack("<Q", f"size of {name}")
        if size != int(np.prod(dims)):
            raise FormatError(f"weight {name!r}: {size} values do not fill shape {dims}")
        raw = r.take(4 * size, f"values of {name}")
        weights[name] = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(dims)
    thresholds = {}
    (count,) = r.unpack("<I", "threshold count")
    for _ in range(count):
        name = r.name("threshold name")
        (thresholds[name],) = r.unpack("<d", f"threshold {name}")
    if r.pos != len(body):
        raise FormatError(f"{len(body) - r.pos} unexpected trailing bytes in checkpoint")
    params = NetworkParams(weights, thresholds)
    try:
        check_params(params, arch)
    except Exception as exc:
        raise FormatError(f"checkpoint weights do not match its architecture: {exc}") from exc
    return Checkpoint(arch, params, blobs[1])


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode(ckpt))
    tmp.replace(path)


def load_checkpoint(path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError:
        raise FormatError(f"checkpoint {path} does not exist") from None
    return decode(data)
