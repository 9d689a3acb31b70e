"""Motion tokenizer: 1D-conv encoder, nearest-neighbor vector quantization
against a learnable codebook, and a mirrored upsampling decoder.

Training objective: L1 reconstruction + codebook term + beta-weighted
commitment term, with stop-gradients so the codebook term only updates the
codebook and the commitment term only updates the encoder. The decoder's
gradient reaches the encoder through the straight-through copy
z + sg[z_q - z].
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .motion import (
    FRAME_DIM,
    HEAD_LOCAL,
    ROOT_ANG_VEL,
    ROOT_HEIGHT,
    ROOT_LIN_VEL,
    MotionSequence,
)
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.optim import AdamOptimizer


class DivergenceError(RuntimeError):
    """Training loss went non-finite. Carries the last good state dict."""

    def __init__(self, message: str, last_good_state: dict):
        super().__init__(message)
        self.last_good_state = last_good_state


@dataclass
class VqVaeConfig:
    input_dim: int = FRAME_DIM
    code_dim: int = 512
    codebook_size: int = 1024
    downsample_rate: int = 4          # realized as log2(l) stride-2 stages
    residual_blocks: int = 3
    width: int = 512
    commitment_weight: float = 0.25
    # training-time emphasis on the few channels that drive the global head
    # trajectory (root angular/linear velocity, root height, head offset);
    # under a flat L1 those channels are a negligible share of the objective
    # and the decoder learns to null them, flattening every decoded trajectory
    trajectory_weight: float = 20.0

    def __post_init__(self):
        l = self.downsample_rate
        if l < 1 or (l & (l - 1)) != 0:
            raise ValueError(f"downsample_rate must be a power of two >= 1, got {l}")
        if self.codebook_size < 2:
            raise ValueError(f"codebook_size must be >= 2, got {self.codebook_size}")
        if self.code_dim < 1:
            raise ValueError(f"code_dim must be >= 1, got {self.code_dim}")

    @property
    def num_stages(self) -> int:
        return int(math.log2(self.downsample_rate))


@dataclass
class TokenSequence:
    """Codebook indices for one motion; remembers the pre-padding frame count."""

    indices: list[int]
    source_length: int

    def __post_init__(self):
        if any(i < 0 for i in self.indices):
            raise ValueError("negative token index")


class ResBlock1d(torch.nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = torch.nn.Conv1d(channels, channels, 3, padding=1)
        self.conv2 = torch.nn.Conv1d(channels, channels, 3, padding=1)

    def forward(self, x):
        h = self.conv2(F.gelu(self.conv1(F.gelu(x))))
        return x + h


class MotionEncoder(torch.nn.Module):
    """[B, input_dim, T] -> [B, code_dim, T / l] via stride-2 stages."""

    def __init__(self, cfg: VqVaeConfig):
        super().__init__()
        layers: list[torch.nn.Module] = [torch.nn.Conv1d(cfg.input_dim, cfg.width, 3, padding=1),
                                         torch.nn.GELU()]
        for _ in range(cfg.num_stages):
            layers += [torch.nn.Conv1d(cfg.width, cfg.width, 4, stride=2, padding=1),
                       torch.nn.GELU()]
        layers += [ResBlock1d(cfg.width) for _ in range(cfg.residual_blocks)]
        layers.append(torch.nn.Conv1d(cfg.width, cfg.code_dim, 3, padding=1))
        self.net = torch.nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


class MotionDecoder(torch.nn.Module):
    """[B, code_dim, n] -> [B, input_dim, n * l] via nearest-upsample stages."""

    def __init__(self, cfg: VqVaeConfig):
        super().__init__()
        layers: list[torch.nn.Module] = [torch.nn.Conv1d(cfg.code_dim, cfg.width, 3, padding=1)]
        layers += [ResBlock1d(cfg.width) for _ in range(cfg.residual_blocks)]
        for _ in range(cfg.num_stages):
            layers += [torch.nn.Upsample(scale_factor=2, mode="nearest"),
                       torch.nn.Conv1d(cfg.width, cfg.width, 3, padding=1),
                       torch.nn.GELU()]
        layers.append(torch.nn.Conv1d(cfg.width, cfg.input_dim, 3, padding=1))
        self.net = torch.nn.Sequential(*layers)

    def forward(self, z):
        return self.net(z)


def quantize(z: torch.Tensor, codebook: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Nearest codebook entry per row in Euclidean distance; ties -> lowest index.

    z: [n, d], codebook: [K, d]. Returns (indices [n], z_q [n, d]) where z_q rows
    are exact copies of codebook entries. Distances are computed in float64 so
    the ranking agrees with a brute-force check.
    """
    z64 = z.detach().double()
    cb64 = codebook.detach().double()
    d2 = (z64 * z64).sum(1, keepdim=True) - 2.0 * z64 @ cb64.T + (cb64 * cb64).sum(1)
    indices = d2.argmin(dim=1)
    return indices, codebook.detach()[indices].clone()


def vq_loss(m: torch.Tensor, m_hat: torch.Tensor, z: torch.Tensor, z_q: torch.Tensor,
            beta: float = 0.25) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    """Summed objective: |M - M^|_1 + |sg[z] - z_q|_2^2 + beta * |z - sg[z_q]|_2^2.

    Returns (total, recon, codebook_term, commit_term); commit_term already
    carries the beta factor. z_q must be the differentiable codebook gather so
    the codebook term can update the entries.
    """
    if m.shape != m_hat.shape or z.shape != z_q.shape:
        raise ValueError(f"vq_loss shape mismatch: {tuple(m.shape)} vs {tuple(m_hat.shape)}, "
                         f"{tuple(z.shape)} vs {tuple(z_q.shape)}")
    recon = (m - m_hat).abs().sum()
    codebook_term = ((z.detach() - z_q) ** 2).sum()
    commit_term = beta * ((z - z_q.detach()) ** 2).sum()
    return recon + codebook_term + commit_term, recon, codebook_term, commit_term


class MotionVqVae(torch.nn.Module):
    def __init__(self, cfg: VqVaeConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = MotionEncoder(cfg)
        self.decoder = MotionDecoder(cfg)
        self.codebook = torch.nn.Parameter(torch.randn(cfg.codebook_size, cfg.code_dim) * 0.1)
        self.register_buffer("usage", torch.zeros(cfg.codebook_size))
        weights = torch.ones(cfg.input_dim)
        if cfg.input_dim == FRAME_DIM:
            for ch in (ROOT_ANG_VEL, ROOT_LIN_VEL, ROOT_HEIGHT, HEAD_LOCAL):
                weights[ch] = cfg.trajectory_weight
        self.register_buffer("channel_weights", weights)

    # -- padding ---------------------------------------------------------
    def pad_frames(self, frames: np.ndarray) -> np.ndarray:
        """Edge-replicate the last frame up to a multiple of the downsample rate."""
        l = self.cfg.downsample_rate
        t = frames.shape[0]
        if t < l:
            raise ValueError(f"motion too short to tokenize: T={t} < l={l}")
        pad = (-t) % l
        if pad == 0:
            return frames
        return np.concatenate([frames, np.repeat(frames[-1:], pad, axis=0)], axis=0)

    # -- inference API ----------------------------------------------------
    @torch.no_grad()
    def encode(self, m: MotionSequence) -> torch.Tensor:
        """Motion -> pre-quantization latents [ceil(T/l), code_dim]."""
        self.eval()
        frames = self.pad_frames(m.frames)
        x = torch.from_numpy(frames.T.copy()).unsqueeze(0)
        return self.encoder(x)[0].T.contiguous()

    @torch.no_grad()
    def tokenize(self, m: MotionSequence) -> TokenSequence:
        z = self.encode(m)
        indices, _ = quantize(z, self.codebook)
        return TokenSequence(indices=indices.tolist(), source_length=len(m))

    @torch.no_grad()
    def decode(self, tokens, frame_rate: float = 30.0) -> MotionSequence:
        """Tokens (TokenSequence / index list) or latents [n, code_dim] -> motion
        of exactly l * n frames."""
        self.eval()
        if isinstance(tokens, TokenSequence):
            tokens = tokens.indices
        if isinstance(tokens, torch.Tensor) and tokens.dtype.is_floating_point:
            z_q = tokens
        else:
            idx = torch.as_tensor(tokens, dtype=torch.long)
            if idx.numel() == 0:
                raise ValueError("cannot decode an empty token sequence")
            if int(idx.max()) >= self.cfg.codebook_size or int(idx.min()) < 0:
                raise IndexError(f"token index out of range [0, {self.cfg.codebook_size})")
            z_q = self.codebook.detach()[idx]
        out = self.decoder(z_q.T.unsqueeze(0))[0].T
        return MotionSequence(frames=out.numpy(), frame_rate=frame_rate)

    @torch.no_grad()
    def decode_block(self, context: list[int], frame_rate: float = 30.0) -> np.ndarray:
        """Decode the newest token of a bounded causal context into its l frames.

        The convolutional decoder corrupts its zero-padded boundaries, so the
        context is replicate-padded by one token on each side and the newest
        token's frames are read from the interior. Both the training-time
        feedback features and the streaming engine emit frames through this
        path, so the head-velocity signal the model is conditioned on has the
        same distribution in both settings.
        """
        padded = [context[0]] + list(context) + [context[-1]]
        motion = self.decode(padded, frame_rate=frame_rate)
        l = self.cfg.downsample_rate
        return motion.frames[-2 * l:-l]

    # -- training forward --------------------------------------------------
    def training_losses(self, batch: torch.Tensor):
        """batch: [B, T, input_dim] with T divisible by l. Mean-normalized terms."""
        x = batch.transpose(1, 2)
        z = self.encoder(x).transpose(1, 2)          # [B, n, d]
        flat = z.reshape(-1, self.cfg.code_dim)
        indices, _ = quantize(flat, self.codebook)
        z_q = self.codebook[indices].view_as(z)       # differentiable gather
        z_q_st = z + (z_q - z).detach()               # straight-through copy
        m_hat = self.decoder(z_q_st.transpose(1, 2)).transpose(1, 2)
        err = (batch - m_hat).abs()
        recon = err.mean()                            # reported: flat L1
        weighted_recon = (err * self.channel_weights).mean()
        codebook_term = ((z.detach() - z_q) ** 2).mean()
        commit_term = self.cfg.commitment_weight * ((z - z_q.detach()) ** 2).mean()
        with torch.no_grad():
            self.usage += torch.bincount(indices, minlength=self.cfg.codebook_size).float()
        return weighted_recon + codebook_term + commit_term, recon, flat.detach()

    # -- persistence -------------------------------------------------------
    def save(self, path) -> None:
        meta = {
            "kind": 1.0,
            "input_dim": self.cfg.input_dim,
            "code_dim": self.cfg.code_dim,
            "codebook_size": self.cfg.codebook_size,
            "downsample_rate": self.cfg.downsample_rate,
            "residual_blocks": self.cfg.residual_blocks,
            "width": self.cfg.width,
            "commitment_weight": self.cfg.commitment_weight,
            "trajectory_weight": self.cfg.trajectory_weight,
        }
        save_checkpoint(path, dict(self.state_dict()), meta)

    @classmethod
    def load(cls, path) -> "MotionVqVae":
        tensors, meta = load_checkpoint(path)
        cfg = VqVaeConfig(
            input_dim=int(meta["input_dim"]),
            code_dim=int(meta["code_dim"]),
            codebook_size=int(meta["codebook_size"]),
            downsample_rate=int(meta["downsample_rate"]),
            residual_blocks=int(meta["residual_blocks"]),
            width=int(meta["width"]),
            commitment_weight=meta.get("commitment_weight", 0.25),
            trajectory_weight=meta.get("trajectory_weight", 20.0),
        )
        model = cls(cfg)
        model.load_state_dict(tensors)
        return model


def codebook_stats(usage) -> tuple[float, float]:
    """(perplexity, utilization) of a usage histogram over the codebook."""
    usage = np.asarray(usage, dtype=np.float64)
    if usage.size == 0:
        raise ValueError("empty usage histogram")
    total = usage.sum()
    if total <= 0:
        return 1.0, 0.0
    p = usage / total
    nz = p[p > 0]
    perplexity = float(np.exp(-(nz * np.log(nz)).sum()))
    utilization = float((usage > 0).mean())
    return perplexity, utilization


def train_vqvae(sequences: list[MotionSequence], cfg: VqVaeConfig, epochs: int,
                lr: float = 2e-4, batch_size: int = 16, seed: int = 0,
                log=None) -> tuple[MotionVqVae, list[dict]]:
    """Train the tokenizer; returns (model, per-epoch loss curve).

    Dead codebook entries (zero usage over an epoch) are re-seeded from random
    encoder outputs of that epoch. Raises DivergenceError on a non-finite loss,
    carrying the last epoch-end state.
    """
    torch.manual_seed(seed)
    model = MotionVqVae(cfg)
    opt = AdamOptimizer.for_module(model, lr=lr)
    rng = np.random.default_rng(seed)

    padded = [model.pad_frames(m.frames) for m in sequences]
    by_len: dict[int, list[int]] = {}
    for i, f in enumerate(padded):
        by_len.setdefault(f.shape[0], []).append(i)

    curve: list[dict] = []
    last_good = copy.deepcopy(model.state_dict())
    for epoch in range(epochs):
        model.train()
        model.usage.zero_()
        order = []
        for idxs in by_len.values():
            idxs = list(idxs)
            rng.shuffle(idxs)
            order += [idxs[i:i + batch_size] for i in range(0, len(idxs), batch_size)]
        rng.shuffle(order)
        epoch_total, epoch_recon, n_batches = 0.0, 0.0, 0
        latent_pool: torch.Tensor | None = None
        for group in order:
            batch = torch.from_numpy(np.stack([padded[i] for i in group]))
            total, recon, latents = model.training_losses(batch)
            if not torch.isfinite(total):
                raise DivergenceError(f"non-finite loss at epoch {epoch + 1}", last_good)
            opt.zero_grad()
            total.backward()
            opt.step()
            epoch_total += total.item()
            epoch_recon += recon.item()
            n_batches += 1
            latent_pool = latents

        # re-seed entries the epoch never used
        dead = (model.usage == 0).nonzero(as_tuple=True)[0]
        if len(dead) > 0 and latent_pool is not None and latent_pool.shape[0] > 0:
            pick = rng.integers(0, latent_pool.shape[0], size=len(dead))
            with torch.no_grad():
                model.codebook[dead] = latent_pool[pick]

        perplexity, utilization = codebook_stats(model.usage.numpy())
        row = {"epoch": epoch + 1, "loss": epoch_total / n_batches,
               "recon_l1": epoch_recon / n_batches,
               "perplexity": perplexity, "utilization": utilization}
        curve.append(row)
        last_good = copy.deepcopy(model.state_dict())
        if log:
            log(row)
    model.eval()
    return model, curve
