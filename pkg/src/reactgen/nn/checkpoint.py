"""Binary checkpoint format shared by every model in the artifact.

Layout (all little-endian, no padding):
    magic "ERCK", format version u32, parameter count u32, then per parameter:
    name length u16, UTF-8 name, rank u8, dims as u32s, raw float32 data.

Scalar metadata (codebook size, downsample rate, ...) travels as rank-0
entries under a "meta." name prefix so a checkpoint is self-describing.
"""

from __future__ import annotations

import struct

import numpy as np
import torch

MAGIC = b"ERCK"
VERSION = 1

META_PREFIX = "meta."


class CheckpointFormatError(ValueError):
    """Malformed checkpoint; message carries the byte offset of the failure."""


def save_checkpoint(path, tensors: dict[str, torch.Tensor], meta: dict[str, float] | None = None) -> None:
    entries: list[tuple[str, np.ndarray]] = []
    for name, value in (meta or {}).items():
        entries.append((META_PREFIX + name, np.array(float(value), dtype="<f4")))
    for name, t in tensors.items():
        entries.append((name, t.detach().cpu().numpy().astype("<f4", copy=False)))
    names = [n for n, _ in entries]
    if len(set(names)) != len(names):
        raise ValueError("duplicate parameter names in checkpoint")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(entries)))
        for name, arr in entries:
            raw_name = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw_name)))
            fh.write(raw_name)
            fh.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<I", d))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[dict[str, torch.Tensor], dict[str, float]]:
    """Returns (tensors, meta). Bit-exact round trip for float32 values."""
    with open(path, "rb") as fh:
        blob = fh.read()
    off = 0

    def need(n: int, what: str) -> bytes:
        nonlocal off
        if off + n > len(blob):
            raise CheckpointFormatError(
                f"truncated checkpoint: needed {n} bytes for {what} at offset {off}, "
                f"file has {len(blob)} bytes")
        chunk = blob[off:off + n]
        off += n
        return chunk

    if need(4, "magic") != MAGIC:
        raise CheckpointFormatError(f"bad magic at offset 0: expected {MAGIC!r}")
    version, count = struct.unpack("<II", need(8, "header"))
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version} at offset 4")
    tensors: dict[str, torch.Tensor] = {}
    meta: dict[str, float] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", need(2, "name length"))
        name = need(name_len, "name").decode("utf-8")
        (rank,) = struct.unpack("<B", need(1, "rank"))
        dims = [struct.unpack("<I", need(4, "dim"))[0] for _ in range(rank)]
        numel = 1
        for d in dims:
            numel *= d
        data = np.frombuffer(need(4 * numel, f"data of '{name}'"), dtype="<f4").reshape(dims)
        if name.startswith(META_PREFIX):
            meta[name[len(META_PREFIX):]] = float(data)
        else:
            tensors[name] = torch.from_numpy(data.copy())
    if off != len(blob):
        raise CheckpointFormatError(f"trailing bytes: parameters end at offset {off}, file has {len(blob)}")
    return tensors, meta


def save_module(path, module: torch.nn.Module, meta: dict[str, float] | None = None) -> None:
    save_checkpoint(path, dict(module.state_dict()), meta)


def load_into_module(path, module: torch.nn.Module) -> dict[str, float]:
    tensors, meta = load_checkpoint(path)
    module.load_state_dict(tensors)
    return meta
