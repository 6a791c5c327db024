"""Byte-exact file formats: tensors, checkpoints, configs, frame dumps.

.wvt tensor: magic "WVT1", u32-LE rank, rank u32-LE dims, then raw
float32-LE data in row-major order.  Checkpoints ("WVAE"/"WDIT") wrap a
version word, a length-prefixed key=value header, and length-prefixed
named records whose bodies are complete .wvt payloads.  Everything is
written canonically so identical state serializes to identical bytes.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import torch

WVT_MAGIC = b"WVT1"
VAE_MAGIC = b"WVAE"
DIT_MAGIC = b"WDIT"
CHECKPOINT_VERSION = 1


class FormatError(ValueError):
    """Raised for malformed or truncated on-disk payloads."""


def tensor_to_bytes(tensor: torch.Tensor) -> bytes:
    arr = tensor.detach().to(torch.float32).contiguous().numpy()
    header = WVT_MAGIC + struct.pack("<I", arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.astype("<f4").tobytes()


def tensor_from_bytes(data: bytes) -> torch.Tensor:
    if len(data) < 8 or data[:4] != WVT_MAGIC:
        raise FormatError(f"bad tensor magic {data[:4]!r}, expected {WVT_MAGIC!r}")
    rank = struct.unpack_from("<I", data, 4)[0]
    if rank > 16:
        raise FormatError(f"implausible tensor rank {rank}")
    if len(data) < 8 + 4 * rank:
        raise FormatError("truncated tensor dimension list")
    dims = struct.unpack_from(f"<{rank}I", data, 8)
    count = int(np.prod(dims)) if rank else 1
    body = data[8 + 4 * rank:]
    if len(body) != 4 * count:
        raise FormatError(
            f"tensor body holds {len(body)} bytes, dims {dims} need {4 * count}"
        )
    arr = np.frombuffer(body, dtype="<f4").reshape(dims)
    return torch.from_numpy(arr.copy())


def write_tensor(path, tensor: torch.Tensor):
    Path(path).write_bytes(tensor_to_bytes(tensor))


def read_tensor(path) -> torch.Tensor:
    return tensor_from_bytes(Path(path).read_bytes())


def serialize_config(cfg: dict) -> str:
    """Canonical key=value text: sorted keys, one per line."""
    lines = []
    for key in sorted(cfg):
        value = cfg[key]
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key}={value}")
    return "\n".join(lines) + ("\n" if lines else "")


def parse_config(text: str) -> dict[str, str]:
    """Line-oriented key=value with '#' comments and dotted section keys."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def read_config(path) -> dict[str, str]:
    return parse_config(Path(path).read_text())


def _pack_block(data: bytes) -> bytes:
    return struct.pack("<I", len(data)) + data


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError("truncated checkpoint")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def block(self) -> bytes:
        return self.take(self.u32())


def save_checkpoint(path, magic: bytes, config: dict, tensors: dict[str, torch.Tensor]):
    if magic not in (VAE_MAGIC, DIT_MAGIC):
        raise FormatError(f"unknown checkpoint magic {magic!r}")
    parts = [magic, struct.pack("<I", CHECKPOINT_VERSION),
             _pack_block(serialize_config(config).encode()),
             struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        parts.append(_pack_block(name.encode()))
        parts.append(_pack_block(tensor_to_bytes(tensors[name])))
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path, magic: bytes) -> tuple[dict[str, str], dict[str, torch.Tensor]]:
    reader = _Reader(Path(path).read_bytes())
    got = reader.take(4)
    if got != magic:
        raise FormatError(f"bad checkpoint magic {got!r}, expected {magic!r}")
    version = reader.u32()
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    config = parse_config(reader.block().decode())
    count = reader.u32()
    tensors = {}
    for _ in range(count):
        name = reader.block().decode()
        tensors[name] = tensor_from_bytes(reader.block())
    if reader.pos != len(reader.data):
        raise FormatError("trailing bytes after last checkpoint record")
    return config, tensors


def write_ppm(path, frame: torch.Tensor):
    """Plain (ASCII P3) portable pixmap from a (3, H, W) frame in [-1, 1]."""
    if frame.dim() != 3 or frame.shape[0] != 3:
        raise FormatError(f"frame must be (3, H, W), got {tuple(frame.shape)}")
    h, w = frame.shape[1], frame.shape[2]
    vals = ((frame.clamp(-1, 1) + 1.0) * 127.5).round().to(torch.int64)
    lines = [f"P3\n{w} {h}\n255\n"]
    px = vals.permute(1, 2, 0).reshape(h, w * 3)
    for row in px.tolist():
        lines.append(" ".join(str(v) for v in row) + "\n")
    Path(path).write_text("".join(lines))
