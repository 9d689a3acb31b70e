"""Binary motion ("ERMO") and feature-stream ("ERFS") file formats.

ERMO: magic "ERMO", version u32, frame_rate f32, T u32, D u32 (=263),
      then T*D little-endian f32.
ERFS: magic "ERFS", version u32, frame count u32, semantic dim u32,
      depth H u32, depth W u32, then per frame: semantic f32s followed by
      H*W depth f32s.

Headers are validated before any allocation proportional to the claimed size;
all errors carry the byte offset of the failure.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from ..motion import FRAME_DIM, MotionSequence

ERMO_MAGIC = b"ERMO"
ERFS_MAGIC = b"ERFS"
VERSION = 1


class FileFormatError(ValueError):
    """Malformed artifact file; message names the byte offset."""


def _check_size(path, expected: int, header_end: int) -> None:
    actual = os.path.getsize(path)
    if actual != expected:
        raise FileFormatError(
            f"truncated or oversized file {path}: expected {expected} bytes, "
            f"actual {actual} (payload starts at offset {header_end})")


def write_motion(path, m: MotionSequence) -> None:
    with open(path, "wb") as fh:
        fh.write(ERMO_MAGIC)
        fh.write(struct.pack("<IfII", VERSION, m.frame_rate, len(m), FRAME_DIM))
        fh.write(m.frames.astype("<f4").tobytes())


def read_motion(path) -> MotionSequence:
    header_len = 4 + 4 + 4 + 4 + 4
    with open(path, "rb") as fh:
        header = fh.read(header_len)
        if len(header) < header_len:
            raise FileFormatError(f"{path}: truncated header at offset {len(header)}")
        if header[:4] != ERMO_MAGIC:
            raise FileFormatError(f"{path}: bad magic at offset 0, expected {ERMO_MAGIC!r}")
        version, frame_rate, t, d = struct.unpack("<IfII", header[4:])
        if version != VERSION:
            raise FileFormatError(f"{path}: unsupported version {version} at offset 4")
        if d != FRAME_DIM:
            raise FileFormatError(f"{path}: frame dim {d} != {FRAME_DIM} at offset 16")
        _check_size(path, header_len + 4 * t * d, header_len)
        data = np.frombuffer(fh.read(4 * t * d), dtype="<f4").reshape(t, d)
    return MotionSequence(frames=data.copy(), frame_rate=frame_rate)


@dataclass
class FeatureStream:
    """Per-frame perception: semantic [T, S] and metric depth [T, H, W]."""

    semantic: np.ndarray
    depth: np.ndarray

    def __post_init__(self):
        self.semantic = np.asarray(self.semantic, dtype=np.float32)
        self.depth = np.asarray(self.depth, dtype=np.float32)
        if self.semantic.ndim != 2 or self.depth.ndim != 3:
            raise ValueError(f"need semantic [T,S] and depth [T,H,W], got "
                             f"{self.semantic.shape} / {self.depth.shape}")
        if self.semantic.shape[0] != self.depth.shape[0]:
            raise ValueError("semantic and depth frame counts differ")

    def __len__(self) -> int:
        return self.semantic.shape[0]


def write_feature_stream(path, fs: FeatureStream) -> None:
    t, s = fs.semantic.shape
    _, h, w = fs.depth.shape
    with open(path, "wb") as fh:
        fh.write(ERFS_MAGIC)
        fh.write(struct.pack("<IIIII", VERSION, t, s, h, w))
        for i in range(t):
            fh.write(fs.semantic[i].astype("<f4").tobytes())
            fh.write(fs.depth[i].astype("<f4").tobytes())


def read_feature_stream(path) -> FeatureStream:
    header_len = 4 + 5 * 4
    with open(path, "rb") as fh:
        header = fh.read(header_len)
        if len(header) < header_len:
            raise FileFormatError(f"{path}: truncated header at offset {len(header)}")
        if header[:4] != ERFS_MAGIC:
            raise FileFormatError(f"{path}: bad magic at offset 0, expected {ERFS_MAGIC!r}")
        version, t, s, h, w = struct.unpack("<IIIII", header[4:])
        if version != VERSION:
            raise FileFormatError(f"{path}: unsupported version {version} at offset 4")
        frame_bytes = 4 * (s + h * w)
        _check_size(path, header_len + t * frame_bytes, header_len)
        semantic = np.empty((t, s), dtype=np.float32)
        depth = np.empty((t, h, w), dtype=np.float32)
        for i in range(t):
            raw = fh.read(frame_bytes)
            frame = np.frombuffer(raw, dtype="<f4")
            semantic[i] = frame[:s]
            depth[i] = frame[s:].reshape(h, w)
    return FeatureStream(semantic=semantic, depth=depth)
