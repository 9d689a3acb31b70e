"""Multimodal conditioning: per-step fusion of semantic, depth, head-dynamics
and previous-motion-token features into one token.

Branch outputs all share one feature width (384 by default). The four branch
vectors are concatenated in the fixed order (semantic, depth, head, motion)
and mapped through a two-layer MLP (4F -> hidden -> F) with GELU between.
Semantic features are ingested from files or arrays, never computed from RGB
in-process.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np
import torch
import torch.nn.functional as F

from .data.formats import FeatureStream, read_feature_stream

MIN_DEPTH_SIDE = 8


@dataclass
class FusionConfig:
    feature_dim: int = 384            # width of every branch output
    semantic_dim: int = 384           # width of ingested semantic vectors
    hidden_dim: int = 512
    depth_channels: tuple[int, int] = (32, 96)
    codebook_size: int = 1024         # motion-token vocabulary (BOS extra)
    dropout: float = 0.1
    use_depth: bool = True            # ablation switches: disabled branch
    use_head: bool = True             # contributes a zero vector


class DepthEncoder(torch.nn.Module):
    """Three stride-2 convolutions + adaptive average pooling; output width is
    independent of the input resolution (any H, W >= 8)."""

    def __init__(self, cfg: FusionConfig):
        super().__init__()
        c1, c2 = cfg.depth_channels
        self.conv1 = torch.nn.Conv2d(1, c1, 3, stride=2, padding=1)
        self.conv2 = torch.nn.Conv2d(c1, c2, 3, stride=2, padding=1)
        self.conv3 = torch.nn.Conv2d(c2, cfg.feature_dim, 3, stride=2, padding=1)

    def forward(self, depth: torch.Tensor) -> torch.Tensor:
        """depth: [N, H, W] or [N, 1, H, W] -> [N, feature_dim]."""
        if depth.dim() == 3:
            depth = depth.unsqueeze(1)
        if depth.shape[-2] < MIN_DEPTH_SIDE or depth.shape[-1] < MIN_DEPTH_SIDE:
            raise ValueError(f"depth map too small: {tuple(depth.shape[-2:])}, "
                             f"need at least {MIN_DEPTH_SIDE}x{MIN_DEPTH_SIDE}")
        h = F.gelu(self.conv1(depth))
        h = F.gelu(self.conv2(h))
        h = F.gelu(self.conv3(h))
        return F.adaptive_avg_pool2d(h, 1).flatten(1)


class HeadEncoder(torch.nn.Module):
    """3D head velocity -> feature, via 3 -> hidden -> F with GELU and dropout
    (dropout active only in train mode)."""

    def __init__(self, cfg: FusionConfig):
        super().__init__()
        self.fc1 = torch.nn.Linear(3, cfg.hidden_dim)
        self.fc2 = torch.nn.Linear(cfg.hidden_dim, cfg.feature_dim)
        self.drop = torch.nn.Dropout(cfg.dropout)

    def forward(self, v: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.drop(F.gelu(self.fc1(v))))


class MotionTokenEmbedding(torch.nn.Module):
    """Lookup over K learnable rows plus one dedicated BOS row (index K)."""

    def __init__(self, cfg: FusionConfig):
        super().__init__()
        self.codebook_size = cfg.codebook_size
        self.table = torch.nn.Embedding(cfg.codebook_size + 1, cfg.feature_dim)

    @property
    def bos_id(self) -> int:
        return self.codebook_size

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        ids = torch.as_tensor(ids, dtype=torch.long)
        if ids.numel() > 0 and (int(ids.min()) < 0 or int(ids.max()) > self.codebook_size):
            raise IndexError(f"motion token id out of range [0, {self.codebook_size}] (BOS={self.codebook_size})")
        return self.table(ids)


class PerceptionFusion(torch.nn.Module):
    """All conditioning branches plus the fusion MLP."""

    def __init__(self, cfg: FusionConfig):
        super().__init__()
        self.cfg = cfg
        self.depth_encoder = DepthEncoder(cfg)
        self.head_encoder = HeadEncoder(cfg)
        self.motion_embedding = MotionTokenEmbedding(cfg)
        self.semantic_proj = (torch.nn.Identity() if cfg.semantic_dim == cfg.feature_dim
                              else torch.nn.Linear(cfg.semantic_dim, cfg.feature_dim))
        self.fuse_fc1 = torch.nn.Linear(4 * cfg.feature_dim, cfg.hidden_dim)
        self.fuse_fc2 = torch.nn.Linear(cfg.hidden_dim, cfg.feature_dim)
        # a disabled branch contributes zeros, so its parameters never appear
        # in the graph; freeze them so the optimizer contract stays satisfiable
        if not cfg.use_depth:
            self.depth_encoder.requires_grad_(False)
        if not cfg.use_head:
            self.head_encoder.requires_grad_(False)

    @property
    def bos_id(self) -> int:
        return self.motion_embedding.bos_id

    def fuse(self, f_s: torch.Tensor, f_d: torch.Tensor, f_h: torch.Tensor,
             f_m: torch.Tensor) -> torch.Tensor:
        """Concatenate (f_s, f_d, f_h, f_m) -> 4F, then MLP down to F."""
        fdim = self.cfg.feature_dim
        for name, f in (("semantic", f_s), ("depth", f_d), ("head", f_h), ("motion", f_m)):
            if f.shape[-1] != fdim:
                raise ValueError(f"{name} branch width {f.shape[-1]} != {fdim}")
        joint = torch.cat([f_s, f_d, f_h, f_m], dim=-1)
        return self.fuse_fc2(F.gelu(self.fuse_fc1(joint)))

    def step_tokens(self, semantic: torch.Tensor, depth_feat: torch.Tensor,
                    head_vel: torch.Tensor, prev_ids: torch.Tensor) -> torch.Tensor:
        """Build fusion tokens for any leading batch shape.

        semantic: [..., semantic_dim], depth_feat: [..., F], head_vel: [..., 3],
        prev_ids: [...] long. Ablation switches replace a branch with zeros.
        """
        f_s = self.semantic_proj(semantic)
        f_d = depth_feat if self.cfg.use_depth else torch.zeros_like(depth_feat)
        f_h = self.head_encoder(head_vel)
        if not self.cfg.use_head:
            f_h = torch.zeros_like(f_h)
        f_m = self.motion_embedding(prev_ids)
        return self.fuse(f_s, f_d, f_h, f_m)

    def meta(self) -> dict[str, float]:
        return {
            "feature_dim": self.cfg.feature_dim,
            "semantic_dim": self.cfg.semantic_dim,
            "hidden_dim": self.cfg.hidden_dim,
            "depth_c1": self.cfg.depth_channels[0],
            "depth_c2": self.cfg.depth_channels[1],
            "codebook_size": self.cfg.codebook_size,
            "dropout": self.cfg.dropout,
            "use_depth": float(self.cfg.use_depth),
            "use_head": float(self.cfg.use_head),
        }

    @staticmethod
    def config_from_meta(meta: dict[str, float]) -> FusionConfig:
        return FusionConfig(
            feature_dim=int(meta["feature_dim"]),
            semantic_dim=int(meta["semantic_dim"]),
            hidden_dim=int(meta["hidden_dim"]),
            depth_channels=(int(meta["depth_c1"]), int(meta["depth_c2"])),
            codebook_size=int(meta["codebook_size"]),
            dropout=meta["dropout"],
            use_depth=bool(meta["use_depth"]),
            use_head=bool(meta["use_head"]),
        )


# -- feature providers ------------------------------------------------------

class ArrayFeatureProvider:
    """In-memory provider; used by tests and the synthetic generator."""

    def __init__(self, stream: FeatureStream):
        self.stream = stream

    def frames(self) -> Iterator[tuple[int, np.ndarray, np.ndarray]]:
        for i in range(len(self.stream)):
            yield i, self.stream.semantic[i], self.stream.depth[i]


class FileFeatureProvider(ArrayFeatureProvider):
    """Reads an "ERFS" feature-stream file and replays it in order."""

    def __init__(self, path):
        super().__init__(read_feature_stream(path))
