"""Core differentiable ops: linear, conv1d, causal self-attention, norms, lookups.

Thin, contract-checked wrappers around torch kernels. Everything runs on CPU
float32 by default; gradient checking recasts fragments to float64 (see
gradcheck.py). Reductions are single-device and bit-reproducible for a fixed
thread count.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F

__all__ = [
    "forward_linear",
    "forward_conv1d",
    "causal_self_attention",
    "gelu",
    "layer_norm",
    "embedding_lookup",
    "causal_attention_weights",
    "MultiHeadSelfAttention",
]


class ShapeError(ValueError):
    """Raised when tensor shapes do not conform to an op contract."""


def forward_linear(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    """y = x @ weight + bias, with weight laid out [Din, Dout]."""
    if x.dim() < 1 or weight.dim() != 2:
        raise ShapeError(f"linear: need x rank>=1 and weight rank 2, got {tuple(x.shape)} / {tuple(weight.shape)}")
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear: x last dim {x.shape[-1]} != weight rows {weight.shape[0]}")
    if bias.shape != (weight.shape[1],):
        raise ShapeError(f"linear: bias shape {tuple(bias.shape)} != ({weight.shape[1]},)")
    return x @ weight + bias


def forward_conv1d(x: torch.Tensor, kernel: torch.Tensor, stride: int = 1, padding: int = 0) -> torch.Tensor:
    """1D cross-correlation. x: [B, Cin, T], kernel: [Cout, Cin, k] -> [B, Cout, T'].

    T' = floor((T + 2*padding - k) / stride) + 1; non-positive T' is rejected.
    """
    if x.dim() != 3 or kernel.dim() != 3:
        raise ShapeError(f"conv1d: need x [B,Cin,T] and kernel [Cout,Cin,k], got {tuple(x.shape)} / {tuple(kernel.shape)}")
    if x.shape[1] != kernel.shape[1]:
        raise ShapeError(f"conv1d: Cin mismatch {x.shape[1]} vs {kernel.shape[1]}")
    if stride < 1:
        raise ShapeError(f"conv1d: stride must be >= 1, got {stride}")
    t_out = (x.shape[2] + 2 * padding - kernel.shape[2]) // stride + 1
    if t_out <= 0:
        raise ShapeError(
            f"conv1d: output length {t_out} <= 0 for T={x.shape[2]}, k={kernel.shape[2]}, "
            f"stride={stride}, padding={padding}"
        )
    return F.conv1d(x, kernel, stride=stride, padding=padding)


def gelu(x: torch.Tensor) -> torch.Tensor:
    """Exact (erf-based) GELU; gelu(0) = 0."""
    return F.gelu(x)


def layer_norm(x: torch.Tensor, gain: torch.Tensor, bias: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    """Normalize the last dimension to mean 0 / var 1, then apply affine gain/bias."""
    if gain.shape != x.shape[-1:] or bias.shape != x.shape[-1:]:
        raise ShapeError(f"layer_norm: affine shapes {tuple(gain.shape)}/{tuple(bias.shape)} != ({x.shape[-1]},)")
    return F.layer_norm(x, x.shape[-1:], gain, bias, eps)


def embedding_lookup(table: torch.Tensor, ids: torch.Tensor) -> torch.Tensor:
    """Row copies from table [V, D] for integer ids; out-of-range ids rejected."""
    if table.dim() != 2:
        raise ShapeError(f"embedding: table must be [V,D], got {tuple(table.shape)}")
    ids = torch.as_tensor(ids, dtype=torch.long)
    if ids.numel() > 0 and (int(ids.min()) < 0 or int(ids.max()) >= table.shape[0]):
        raise IndexError(f"embedding: id out of range [0,{table.shape[0]}) in {ids.flatten().tolist()[:8]}")
    return table[ids]


def _causal_mask(t: int, dtype: torch.dtype) -> torch.Tensor:
    # Additive mask: 0 on/below the diagonal, -inf above. exp(-inf) = 0 exactly,
    # so masked positions contribute zero weight bit-exactly.
    mask = torch.full((t, t), float("-inf"), dtype=dtype)
    return torch.triu(mask, diagonal=1)


def causal_attention_weights(q: torch.Tensor, k: torch.Tensor) -> torch.Tensor:
    """Softmax attention weights with a causal mask. q,k: [..., T, Dh] -> [..., T, T]."""
    scores = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
    scores = scores + _causal_mask(q.shape[-2], q.dtype)
    return torch.softmax(scores, dim=-1)


class MultiHeadSelfAttention(torch.nn.Module):
    """Causal multi-head self-attention with an optional incremental K/V cache.

    Position t attends to positions <= t only. With a cache, feeding one step at
    a time reproduces the full-sequence forward within float accumulation noise.
    """

    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads != 0:
            raise ShapeError(f"attention: dim {dim} not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.qkv = torch.nn.Linear(dim, 3 * dim)
        self.proj = torch.nn.Linear(dim, dim)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, t, _ = x.shape
        return x.view(b, t, self.heads, self.head_dim).transpose(1, 2)  # [B,h,T,Dh]

    def forward(self, x: torch.Tensor, cache: dict | None = None, return_weights: bool = False):
        """x: [B, T, D]. If cache is given, x is appended after the cached prefix."""
        if x.dim() != 3 or x.shape[-1] != self.dim:
            raise ShapeError(f"attention: expected [B,T,{self.dim}], got {tuple(x.shape)}")
        b, t, _ = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        q, k, v = self._split(q), self._split(k), self._split(v)
        offset = 0
        if cache is not None:
            if "k" in cache:
                k = torch.cat([cache["k"], k], dim=2)
                v = torch.cat([cache["v"], v], dim=2)
            offset = k.shape[2] - t
            cache["k"], cache["v"] = k, v
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        total = k.shape[2]
        # query i sits at absolute position offset+i and may attend keys <= it
        mask = torch.full((t, total), float("-inf"), dtype=scores.dtype)
        mask = torch.triu(mask, diagonal=offset + 1)
        weights = torch.softmax(scores + mask, dim=-1)
        out = (weights @ v).transpose(1, 2).reshape(b, t, self.dim)
        out = self.proj(out)
        if return_weights:
            return out, weights
        return out


def causal_self_attention(x: torch.Tensor, heads: int, params: MultiHeadSelfAttention) -> torch.Tensor:
    """Functional entry point over a parameter-owning attention module."""
    if params.heads != heads:
        raise ShapeError(f"attention: module built with {params.heads} heads, asked for {heads}")
    return params(x)
