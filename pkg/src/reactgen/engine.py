"""Online frame-in / motion-out generation loop.

Frames arrive one at a time; every time a full token window (l frames) has
accumulated, the engine fuses the window's perception features with the head
velocity derived from its *own* previously decoded motion, runs one cached
transformer step, samples a motion token, and decodes the token's l motion
frames. Decoding uses a bounded causal context of past tokens, so frames are
emitted once and never revised: for greedy decoding the output for any stream
prefix is bit-identical to the prefix of the full-stream output.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .data.formats import FeatureStream
from .motion import (
    HEAD_LOCAL,
    ROOT_ANG_VEL,
    ROOT_HEIGHT,
    ROOT_LIN_VEL,
    MotionSequence,
    rot_y,
)
from .reactor import Reactor, SamplingPolicy, sample_next
from .vqvae import MotionVqVae

DECODE_CONTEXT = 8  # past tokens visible to the decoder; covers its receptive field


class CheckpointMismatchError(ValueError):
    """Tokenizer and reactor checkpoints disagree; message lists every field."""


@dataclass
class FrameInput:
    frame_index: int
    semantic: np.ndarray
    depth: np.ndarray
    timestamp: float | None = None


@dataclass
class StreamOutput:
    token_index: int
    token_id: int
    frames: np.ndarray          # [l, 263] newly decoded motion frames
    latency_ms: float


@dataclass
class LatencyRecord:
    token_index: int
    window_close_ms: float
    emit_ms: float


def check_compatibility(vqvae: MotionVqVae, reactor: Reactor) -> None:
    problems = []
    if vqvae.cfg.codebook_size != reactor.vocab:
        problems.append(f"codebook_size: vqvae={vqvae.cfg.codebook_size} reactor vocab={reactor.vocab}")
    if vqvae.cfg.downsample_rate != reactor.downsample_rate:
        problems.append(f"downsample_rate: vqvae={vqvae.cfg.downsample_rate} "
                        f"reactor={reactor.downsample_rate}")
    if problems:
        raise CheckpointMismatchError("incompatible checkpoints:\n  " + "\n  ".join(problems))


class StreamingEngine:
    """One engine = one generation stream; not shareable across streams."""

    def __init__(self, vqvae: MotionVqVae, reactor: Reactor,
                 policy: SamplingPolicy | None = None, seed: int = 0,
                 frame_rate: float = 30.0, decode_context: int = DECODE_CONTEXT):
        check_compatibility(vqvae, reactor)
        self.vqvae = vqvae.eval()
        self.reactor = reactor.eval()
        self.policy = policy or SamplingPolicy(mode="greedy")
        self.frame_rate = frame_rate
        self.decode_context = decode_context
        self.rng = torch.Generator().manual_seed(seed)
        self.session = reactor.session()

        self.l = vqvae.cfg.downsample_rate
        self.tokens: list[int] = []
        self.decoded: list[np.ndarray] = []        # emitted [l, 263] blocks
        self.latency: list[LatencyRecord] = []
        self.head_velocity_log: list[np.ndarray] = []   # instrumentation hook
        self._expected_frame = 0
        self._window_sem: list[np.ndarray] = []
        self._window_depth: list[torch.Tensor] = []
        # incremental root-trajectory integration over decoded frames
        self._heading = 0.0
        self._pos_xz = np.zeros(2, dtype=np.float64)
        self._head_positions: list[np.ndarray] = []

    # -- kinematic feedback -------------------------------------------------
    def _integrate_frames(self, frames: np.ndarray) -> None:
        dt = 1.0 / self.frame_rate
        for f in frames.astype(np.float64):
            vx, vz = f[ROOT_LIN_VEL]
            c, s = np.cos(self._heading), np.sin(self._heading)
            self._pos_xz = self._pos_xz + dt * np.array([c * vx + s * vz, -s * vx + c * vz])
            self._heading += dt * f[ROOT_ANG_VEL]
            root = np.array([self._pos_xz[0], f[ROOT_HEIGHT], self._pos_xz[1]])
            self._head_positions.append(root + rot_y(self._heading) @ f[HEAD_LOCAL])

    def _feedback_velocity(self) -> np.ndarray:
        if len(self._head_positions) < 2:
            return np.zeros(3)
        return (self._head_positions[-1] - self._head_positions[-2]) * self.frame_rate

    # -- streaming API --------------------------------------------------------
    @torch.no_grad()
    def push_frame(self, frame: FrameInput) -> StreamOutput | None:
        if frame.frame_index != self._expected_frame:
            raise ValueError(f"out-of-order frame: expected index {self._expected_frame}, "
                             f"got {frame.frame_index}")
        self._expected_frame += 1
        arrival = frame.timestamp if frame.timestamp is not None else time.perf_counter()
        self._window_sem.append(np.asarray(frame.semantic, dtype=np.float32))
        depth = torch.from_numpy(np.asarray(frame.depth, dtype=np.float32)).unsqueeze(0)
        self._window_depth.append(self.reactor.fusion.depth_encoder(depth)[0])
        if len(self._window_sem) < self.l:
            return None

        window_close = time.perf_counter()
        sem = torch.from_numpy(np.mean(self._window_sem, axis=0).astype(np.float32))
        depth_feat = torch.stack(self._window_depth).mean(dim=0)
        self._window_sem.clear()
        self._window_depth.clear()

        velocity = self._feedback_velocity()
        self.head_velocity_log.append(velocity.copy())
        prev_id = self.tokens[-1] if self.tokens else self.reactor.fusion.bos_id
        fusion_token = self.reactor.fusion.step_tokens(
            sem, depth_feat, torch.as_tensor(velocity, dtype=torch.float32),
            torch.tensor(prev_id))
        logits = self.session.step(fusion_token)
        token = sample_next(logits, self.policy, self.rng)
        self.tokens.append(token)

        new_frames = self.vqvae.decode_block(self.tokens[-self.decode_context:],
                                             frame_rate=self.frame_rate)
        self.decoded.append(new_frames)
        self._integrate_frames(new_frames)

        emit = time.perf_counter()
        self.latency.append(LatencyRecord(token_index=len(self.tokens) - 1,
                                          window_close_ms=window_close * 1e3,
                                          emit_ms=emit * 1e3))
        return StreamOutput(token_index=len(self.tokens) - 1, token_id=token,
                            frames=new_frames, latency_ms=(emit - arrival) * 1e3)

    @property
    def motion_frames(self) -> np.ndarray:
        if not self.decoded:
            return np.zeros((0, self.vqvae.cfg.input_dim), dtype=np.float32)
        return np.concatenate(self.decoded, axis=0)

    def motion(self) -> MotionSequence:
        return MotionSequence(frames=self.motion_frames, frame_rate=self.frame_rate)


def run_offline(vqvae: MotionVqVae, reactor: Reactor, stream: FeatureStream,
                policy: SamplingPolicy | None = None, seed: int = 0,
                frame_rate: float = 30.0) -> tuple[np.ndarray, list[LatencyRecord]]:
    """Batch wrapper over the streaming core: frames are pushed one at a time,
    so the result is identical to online operation by construction."""
    engine = StreamingEngine(vqvae, reactor, policy=policy, seed=seed, frame_rate=frame_rate)
    for i in range(len(stream)):
        engine.push_frame(FrameInput(frame_index=i, semantic=stream.semantic[i],
                                     depth=stream.depth[i]))
    return engine.motion_frames, engine.latency


def measure_ffl(make_engine, stream: FeatureStream, runs: int = 20) -> dict:
    """First-frame latency: wall-clock from arrival of the frame completing the
    first token window to emission of the first decoded frames. Median + IQR
    over fresh-engine runs."""
    samples = []
    for _ in range(runs):
        engine = make_engine()
        out = None
        for i in range(len(stream)):
            out = engine.push_frame(FrameInput(frame_index=i, semantic=stream.semantic[i],
                                               depth=stream.depth[i],
                                               timestamp=time.perf_counter()))
            if out is not None:
                break
        if out is None:
            raise ValueError("stream too short to complete a token window")
        samples.append(out.latency_ms)
    q25, q50, q75 = np.percentile(samples, [25, 50, 75])
    return {"median_ms": float(q50), "iqr_ms": float(q75 - q25),
            "runs": len(samples), "samples_ms": samples}
