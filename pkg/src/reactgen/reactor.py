"""Causal autoregressive transformer over motion tokens, conditioned on fusion
tokens. Pre-normalization blocks, learned per-step positional embeddings, and
an incremental K/V cache whose step-by-step logits match full teacher-forced
recomputation.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .fusion import FusionConfig, PerceptionFusion
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.ops import MultiHeadSelfAttention


@dataclass
class ReactorConfig:
    model_dim: int = 1024
    heads: int = 8          # stated 6-head default is incompatible with dim 1024
    layers: int = 8
    max_steps: int = 256
    dropout: float = 0.1

    def __post_init__(self):
        if self.model_dim % self.heads != 0:
            raise ValueError(f"model_dim {self.model_dim} not divisible by heads {self.heads}")


@dataclass
class SamplingPolicy:
    mode: str = "temperature"       # "greedy" | "temperature"
    temperature: float = 1.0
    top_k: int | None = None

    def __post_init__(self):
        if self.mode not in ("greedy", "temperature"):
            raise ValueError(f"unknown sampling mode '{self.mode}'")
        if self.mode == "temperature" and not self.temperature > 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")

    @property
    def stochastic(self) -> bool:
        return self.mode != "greedy"


def sample_next(logits: torch.Tensor, policy: SamplingPolicy,
                generator: torch.Generator | None = None) -> int:
    """One token id from per-step logits [K]. Greedy ties break to the lowest index."""
    if not torch.isfinite(logits).all():
        raise ValueError("non-finite logits")
    if policy.mode == "greedy":
        return int(torch.argmax(logits))
    scaled = logits.double() / policy.temperature
    if policy.top_k is not None and policy.top_k < logits.shape[-1]:
        values, indices = torch.topk(scaled, policy.top_k)
        probs = torch.softmax(values, dim=-1)
        pick = torch.multinomial(probs, 1, generator=generator)
        return int(indices[pick])
    probs = torch.softmax(scaled, dim=-1)
    return int(torch.multinomial(probs, 1, generator=generator))


def nll_loss(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean over steps of -log softmax(logits)[target]. logits [..., K]."""
    targets = torch.as_tensor(targets, dtype=torch.long)
    k = logits.shape[-1]
    if targets.numel() > 0 and (int(targets.min()) < 0 or int(targets.max()) >= k):
        raise IndexError(f"target token out of range [0, {k})")
    return F.cross_entropy(logits.reshape(-1, k), targets.reshape(-1))


class TransformerBlock(torch.nn.Module):
    def __init__(self, cfg: ReactorConfig):
        super().__init__()
        self.ln1 = torch.nn.LayerNorm(cfg.model_dim)
        self.attn = MultiHeadSelfAttention(cfg.model_dim, cfg.heads)
        self.ln2 = torch.nn.LayerNorm(cfg.model_dim)
        self.mlp = torch.nn.Sequential(
            torch.nn.Linear(cfg.model_dim, 4 * cfg.model_dim),
            torch.nn.GELU(),
            torch.nn.Linear(4 * cfg.model_dim, cfg.model_dim),
        )
        self.drop = torch.nn.Dropout(cfg.dropout)

    def forward(self, x: torch.Tensor, cache: dict | None = None) -> torch.Tensor:
        x = x + self.drop(self.attn(self.ln1(x), cache=cache))
        return x + self.drop(self.mlp(self.ln2(x)))


class ReactionTransformer(torch.nn.Module):
    """Fusion tokens [B, n, F] -> next-token logits [B, n, K]."""

    def __init__(self, cfg: ReactorConfig, feature_dim: int, vocab: int):
        super().__init__()
        if vocab < 2:
            raise ValueError(f"vocab must be >= 2, got {vocab}")
        self.cfg = cfg
        self.vocab = vocab
        self.input_proj = torch.nn.Linear(feature_dim, cfg.model_dim)
        self.pos = torch.nn.Embedding(cfg.max_steps, cfg.model_dim)
        self.blocks = torch.nn.ModuleList(TransformerBlock(cfg) for _ in range(cfg.layers))
        self.ln_f = torch.nn.LayerNorm(cfg.model_dim)
        self.head = torch.nn.Linear(cfg.model_dim, vocab)

    def forward(self, fusion_tokens: torch.Tensor, caches: list[dict] | None = None,
                offset: int = 0) -> torch.Tensor:
        b, n, _ = fusion_tokens.shape
        if offset + n > self.cfg.max_steps:
            raise ValueError(f"sequence length {offset + n} exceeds max_steps {self.cfg.max_steps}")
        pos_ids = torch.arange(offset, offset + n)
        x = self.input_proj(fusion_tokens) + self.pos(pos_ids)
        for i, block in enumerate(self.blocks):
            x = block(x, cache=caches[i] if caches is not None else None)
        return self.head(self.ln_f(x))


class DecodingSession:
    """Owns the incremental K/V cache for one streaming generation."""

    def __init__(self, transformer: ReactionTransformer):
        self.transformer = transformer
        self.caches: list[dict] = [{} for _ in transformer.blocks]
        self.length = 0

    @torch.no_grad()
    def step(self, fusion_token: torch.Tensor) -> torch.Tensor:
        """fusion_token [F] -> logits [K] for the next motion token."""
        self.transformer.eval()
        logits = self.transformer(fusion_token.view(1, 1, -1), caches=self.caches,
                                  offset=self.length)
        self.length += 1
        return logits[0, 0]


class Reactor(torch.nn.Module):
    """Fusion branches + transformer, checkpointed as one unit."""

    def __init__(self, cfg: ReactorConfig, fusion_cfg: FusionConfig,
                 downsample_rate: int = 4):
        super().__init__()
        self.cfg = cfg
        self.downsample_rate = downsample_rate
        self.fusion = PerceptionFusion(fusion_cfg)
        self.transformer = ReactionTransformer(cfg, fusion_cfg.feature_dim,
                                               fusion_cfg.codebook_size)

    @property
    def vocab(self) -> int:
        return self.transformer.vocab

    def forward_teacher_forced(self, semantic: torch.Tensor, depth_feat: torch.Tensor,
                               head_vel: torch.Tensor, prev_ids: torch.Tensor) -> torch.Tensor:
        """All inputs per step, [B, n, ...] -> logits [B, n, K]."""
        if not (semantic.shape[1] == depth_feat.shape[1] == head_vel.shape[1] == prev_ids.shape[1]):
            raise ValueError("teacher-forcing inputs must share the step dimension, got "
                             f"{semantic.shape[1]}/{depth_feat.shape[1]}/{head_vel.shape[1]}/{prev_ids.shape[1]}")
        tokens = self.fusion.step_tokens(semantic, depth_feat, head_vel, prev_ids)
        return self.transformer(tokens)

    def session(self) -> DecodingSession:
        return DecodingSession(self.transformer)

    def save(self, path) -> None:
        meta = {"kind": 2.0, "model_dim": self.cfg.model_dim, "heads": self.cfg.heads,
                "layers": self.cfg.layers, "max_steps": self.cfg.max_steps,
                "reactor_dropout": self.cfg.dropout, "downsample_rate": self.downsample_rate}
        meta.update(self.fusion.meta())
        save_checkpoint(path, dict(self.state_dict()), meta)

    @classmethod
    def load(cls, path) -> "Reactor":
        tensors, meta = load_checkpoint(path)
        cfg = ReactorConfig(model_dim=int(meta["model_dim"]), heads=int(meta["heads"]),
                            layers=int(meta["layers"]), max_steps=int(meta["max_steps"]),
                            dropout=meta["reactor_dropout"])
        fusion_cfg = PerceptionFusion.config_from_meta(meta)
        model = cls(cfg, fusion_cfg, downsample_rate=int(meta["downsample_rate"]))
        model.load_state_dict(tensors)
        model.eval()
        return model
