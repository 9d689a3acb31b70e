"""Reactor training harness: conditioning preparation and the teacher-forced loop.

Teacher forcing uses ground-truth previous tokens. Head velocity for token
step t is the finite difference, over the last two frames preceding the step's
window, of the head trajectory recovered from *decoding the ground-truth
tokens* block by block — the same computation the streaming engine performs on
its own decoded motion at inference — and zero for the first step.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np
import torch

from .data.formats import FeatureStream
from .engine import DECODE_CONTEXT
from .motion import MotionSequence, head_trajectory
from .nn.optim import AdamOptimizer
from .reactor import Reactor, nll_loss
from .vqvae import DivergenceError, MotionVqVae


@dataclass
class PreparedSample:
    """Per-token-step conditioning arrays plus target tokens for one episode."""

    tokens: np.ndarray        # [n] target codebook indices
    prev_ids: np.ndarray      # [n] teacher-forced previous ids (BOS first)
    semantic: np.ndarray      # [n, semantic_dim] window-averaged
    depth: np.ndarray         # [n, l, H, W] raw per-frame depth in the window
    head_vel: np.ndarray      # [n, 3]


def prepare_sample(fs: FeatureStream, motion: MotionSequence, vqvae: MotionVqVae,
                   bos_id: int) -> PreparedSample:
    if len(fs) != len(motion):
        raise ValueError(f"feature frame count {len(fs)} != motion frame count {len(motion)}")
    l = vqvae.cfg.downsample_rate
    tokens = np.asarray(vqvae.tokenize(motion).indices, dtype=np.int64)
    n = len(tokens)

    def pad(a: np.ndarray) -> np.ndarray:
        need = n * l - a.shape[0]
        if need <= 0:
            return a
        return np.concatenate([a, np.repeat(a[-1:], need, axis=0)], axis=0)

    semantic = pad(fs.semantic).reshape(n, l, -1).mean(axis=1)
    depth = pad(fs.depth).reshape(n, l, *fs.depth.shape[1:])
    # Head-velocity conditioning comes from the *decoded* token stream, block
    # by block with the same bounded causal context the streaming engine uses,
    # not from the raw ground-truth frames. At generation time the model can
    # only ever observe velocities derived from its own decoded output, so
    # training on ground-truth velocities would condition it on a signal it
    # never sees again. Each block depends only on tokens <= its own index,
    # so head_vel[t] never looks at target token t.
    emitted = np.concatenate(
        [vqvae.decode_block(tokens[max(0, k + 1 - DECODE_CONTEXT):k + 1].tolist(),
                            frame_rate=motion.frame_rate)
         for k in range(n)], axis=0)
    heads = head_trajectory(MotionSequence(frames=emitted, frame_rate=motion.frame_rate))
    head_vel = np.zeros((n, 3), dtype=np.float64)
    for t in range(1, n):
        last = t * l - 1
        head_vel[t] = (heads[last] - heads[last - 1]) * motion.frame_rate
    prev_ids = np.concatenate([[bos_id], tokens[:-1]])
    return PreparedSample(tokens=tokens, prev_ids=prev_ids,
                          semantic=semantic.astype(np.float32),
                          depth=depth.astype(np.float32),
                          head_vel=head_vel.astype(np.float32))


def shuffle_targets(prepared: list[PreparedSample], seed: int = 0) -> list[PreparedSample]:
    """Permutation control: every sample keeps its own conditioning inputs but
    gets the target tokens of a different sample (cyclic shift after a seeded
    shuffle, so no sample keeps its own targets)."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(prepared))
    out = []
    for i, j in enumerate(order):
        donor = prepared[order[(i + 1) % len(order)]]
        src = prepared[j]
        out.append(PreparedSample(tokens=donor.tokens.copy(), prev_ids=src.prev_ids.copy(),
                                  semantic=src.semantic, depth=src.depth,
                                  head_vel=src.head_vel))
    return out


def _batch_tensors(batch: list[PreparedSample]):
    sem = torch.from_numpy(np.stack([s.semantic for s in batch]))
    depth = torch.from_numpy(np.stack([s.depth for s in batch]))
    vel = torch.from_numpy(np.stack([s.head_vel for s in batch]))
    prev = torch.from_numpy(np.stack([s.prev_ids for s in batch]))
    targets = torch.from_numpy(np.stack([s.tokens for s in batch]))
    return sem, depth, vel, prev, targets


def _window_depth_features(reactor: Reactor, depth: torch.Tensor) -> torch.Tensor:
    """[B, n, l, H, W] -> per-step depth features [B, n, F] (window mean)."""
    b, n, l, h, w = depth.shape
    feats = reactor.fusion.depth_encoder(depth.reshape(b * n * l, h, w))
    return feats.view(b, n, l, -1).mean(dim=2)


def reactor_logits(reactor: Reactor, batch: list[PreparedSample]) -> tuple[torch.Tensor, torch.Tensor]:
    sem, depth, vel, prev, targets = _batch_tensors(batch)
    depth_feat = _window_depth_features(reactor, depth)
    logits = reactor.forward_teacher_forced(sem, depth_feat, vel, prev)
    return logits, targets


def train_reactor(prepared: list[PreparedSample], reactor: Reactor, epochs: int,
                  lr: float = 3e-4, batch_size: int = 16, seed: int = 0,
                  log=None) -> list[dict]:
    """Teacher-forced cross-entropy training; returns the per-epoch loss curve.

    Raises DivergenceError (carrying the last epoch-end state) on NaN loss.
    All sequences must share one token count.
    """
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    opt = AdamOptimizer.for_module(reactor, lr=lr)
    curve: list[dict] = []
    last_good = copy.deepcopy(reactor.state_dict())
    for epoch in range(epochs):
        reactor.train()
        order = rng.permutation(len(prepared))
        total, correct, count, n_batches = 0.0, 0, 0, 0
        for start in range(0, len(order), batch_size):
            batch = [prepared[i] for i in order[start:start + batch_size]]
            logits, targets = reactor_logits(reactor, batch)
            loss = nll_loss(logits, targets)
            if not torch.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch + 1}", last_good)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item()
            n_batches += 1
            with torch.no_grad():
                correct += int((logits.argmax(-1) == targets).sum())
                count += targets.numel()
        row = {"epoch": epoch + 1, "loss": total / n_batches, "accuracy": correct / count}
        curve.append(row)
        last_good = copy.deepcopy(reactor.state_dict())
        if log:
            log(row)
    reactor.eval()
    return curve


@torch.no_grad()
def teacher_forced_accuracy(reactor: Reactor, prepared: list[PreparedSample],
                            batch_size: int = 16) -> float:
    reactor.eval()
    correct, count = 0, 0
    for start in range(0, len(prepared), batch_size):
        batch = prepared[start:start + batch_size]
        logits, targets = reactor_logits(reactor, batch)
        correct += int((logits.argmax(-1) == targets).sum())
        count += targets.numel()
    return correct / count
