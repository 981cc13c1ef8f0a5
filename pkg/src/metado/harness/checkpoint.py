"""MDO1 binary checkpoints: magic, then (name, rank, dims, float32 data) per tensor."""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..policy import PolicyConfig, PolicyParams

MAGIC = b"MDO1"


class CheckpointError(Exception):
    """Base class for unreadable checkpoints."""


class BadMagic(CheckpointError):
    pass


class TruncatedTensor(CheckpointError):
    pass


class DimensionMismatch(CheckpointError):
    pass


def encode(params: PolicyParams) -> bytes:
    out = [MAGIC]
    for name, arr in params.items():
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)))
        out.append(raw)
        out.append(struct.pack("<I", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(out)


def save_checkpoint(params: PolicyParams, path) -> None:
    Path(path).write_bytes(encode(params))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedTensor(f"file ends inside {what} at byte {self.pos}")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def decode(buf: bytes) -> dict[str, np.ndarray]:
    if buf[:4] != MAGIC:
        raise BadMagic(f"expected {MAGIC!r}, found {buf[:4]!r}")
    r = _Reader(buf)
    r.pos = 4
    tensors: dict[str, np.ndarray] = {}
    while r.pos < len(buf):
        name = r.take(r.u32("name length"), "tensor name").decode("utf-8")
        rank = r.u32(f"{name} rank")
        if rank > 8:
            raise DimensionMismatch(f"{name}: implausible rank {rank}")
        dims = tuple(r.u32(f"{name} dims") for _ in range(rank))
        count = int(np.prod(dims, dtype=np.int64))
        data = np.frombuffer(r.take(4 * count, f"{name} data"), dtype="<f4")
        tensors[name] = data.reshape(dims).astype(np.float64)
    return tensors


def infer_config(tensors: dict[str, np.ndarray], n_heads: int = 4) -> PolicyConfig:
    """Architecture from tensor shapes; head count is not stored and must be supplied."""
    try:
        d_in, d_model = tensors["pe.w"].shape
        d_ff = tensors["enc.ff1.w"].shape[1]
        d_critic = tensors["critic.l1.w"].shape[1]
        n_out = tensors["mu.w"].shape[1]
    except (KeyError, ValueError) as exc:
        raise DimensionMismatch(f"cannot infer architecture: {exc}") from None
    try:
        return PolicyConfig(d_in, d_model, n_heads, d_ff, d_critic, n_out)
    except ValueError as exc:
        raise DimensionMismatch(str(exc)) from None


def load_checkpoint(path, n_heads: int = 4, expected: PolicyConfig | None = None) -> PolicyParams:
    tensors = decode(Path(path).read_bytes())
    config = infer_config(tensors, n_heads) if expected is None else expected
    shapes = config.shapes()
    if list(tensors) != list(shapes):
        raise DimensionMismatch("tensor names or order differ from the architecture")
    for name, shape in shapes.items():
        if tensors[name].shape != shape:
            raise DimensionMismatch(f"{name}: expected {shape}, found {tensors[name].shape}")
    return PolicyParams(config, tensors)
