"""Deterministic synthetic paired (feature stream, reaction motion) samples.

Each sample is a short "stimulus approaches, person reacts" episode:

  * depth maps show an object patch whose minimum depth closes monotonically
    at a rate set by a per-sample intensity level; reaction onset is the frame
    where the object crosses a proximity threshold, so both timing and
    amplitude of the reaction are readable from depth (and only from depth);
  * semantic features are a per-scenario basis direction plus seeded
    low-amplitude noise, so scenarios are linearly separable;
  * the motion is a procedural full-body reaction (retreat, dodge, duck, ...)
    whose root channels integrate to a head trajectory consistent with the
    reaction.

Everything is a pure function of (scenario, seed, length): the generator's
random stream is a seeded PCG64 keyed on integers only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..motion import (
    FOOT_CONTACT,
    FRAME_DIM,
    HEAD_LOCAL,
    JOINT_ROT6D,
    LOCAL_VEL,
    ROOT_ANG_VEL,
    ROOT_HEIGHT,
    ROOT_LIN_VEL,
    MotionSequence,
)
from .formats import FeatureStream, write_feature_stream, write_motion

SCENARIOS = ("approach", "retreat", "dodge_left", "dodge_right", "duck", "jump")

INTENSITY_LEVELS = (0.7, 1.0, 1.3)
INTENSITY_JITTER = 0.05
ONSET_DEPTH = 1.8        # meters; reaction starts when the object gets this close
START_DEPTH = 4.5
BASE_CLOSURE = 1.2       # m/s at intensity 1.0
BASE_SPEED = 1.1         # m/s peak root speed at intensity 1.0
RAMP_FRAMES = 15
SUSTAIN_FRAMES = 40
REST_HEIGHT = 0.92
HEAD_ABOVE_ROOT = 0.72

_IDENTITY_6D = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0], dtype=np.float32)


@dataclass
class GeneratorParams:
    length: int = 152
    semantic_dim: int = 384
    depth_size: tuple[int, int] = (16, 16)
    frame_rate: float = 30.0
    semantic_noise: float = 0.05
    depth_noise: float = 0.02


def scenario_index(scenario: str) -> int:
    try:
        return SCENARIOS.index(scenario)
    except ValueError:
        raise ValueError(f"unknown scenario '{scenario}', expected one of {SCENARIOS}") from None


def scenario_basis(scenario: str, dim: int) -> np.ndarray:
    """Block one-hot direction per scenario; blocks tile the semantic vector."""
    idx = scenario_index(scenario)
    block = max(1, dim // len(SCENARIOS))
    v = np.zeros(dim, dtype=np.float32)
    v[idx * block:(idx + 1) * block] = 1.0
    return v


def _envelope(t: np.ndarray, onset: int) -> np.ndarray:
    """Ramp up over RAMP_FRAMES, sustain, ramp down; zero before onset."""
    rel = t - onset
    up = np.clip(rel / RAMP_FRAMES, 0.0, 1.0)
    down = np.clip((rel - RAMP_FRAMES - SUSTAIN_FRAMES) / RAMP_FRAMES, 0.0, 1.0)
    env = up - down
    return np.where(rel < 0, 0.0, np.clip(env, 0.0, 1.0))


def generate_arrays(scenario: str, seed: int, params: GeneratorParams | None = None
                    ) -> tuple[FeatureStream, MotionSequence]:
    """Deterministic (features, motion) pair for one episode."""
    p = params or GeneratorParams()
    sidx = scenario_index(scenario)
    if p.length < 8:
        raise ValueError(f"length {p.length} too short (need at least 2 token windows)")
    rng = np.random.default_rng([int(seed), sidx, 0x5EED])

    level = INTENSITY_LEVELS[int(rng.integers(0, len(INTENSITY_LEVELS)))]
    kappa = level + rng.uniform(-INTENSITY_JITTER, INTENSITY_JITTER)

    t = np.arange(p.length)
    dt = 1.0 / p.frame_rate
    closure = kappa * BASE_CLOSURE
    min_depth = np.maximum(0.5, START_DEPTH - closure * t * dt)
    onset = int(np.argmax(min_depth < ONSET_DEPTH)) if (min_depth < ONSET_DEPTH).any() else p.length
    env = _envelope(t, onset).astype(np.float32)
    speed = (kappa * BASE_SPEED * env).astype(np.float32)

    # ---- depth maps: constant background + an object patch at min_depth ----
    h, w = p.depth_size
    depth = np.full((p.length, h, w), 5.0, dtype=np.float32)
    depth += rng.normal(0.0, p.depth_noise, size=depth.shape).astype(np.float32)
    ch, cw = h // 2, w // 2
    r = max(2, h // 4)
    depth[:, ch - r:ch + r, cw - r:cw + r] = min_depth[:, None, None].astype(np.float32)
    depth = np.maximum(depth, 0.05)

    # ---- semantic features ----
    semantic = np.tile(scenario_basis(scenario, p.semantic_dim), (p.length, 1))
    semantic += rng.normal(0.0, p.semantic_noise, size=semantic.shape).astype(np.float32)

    # ---- motion ----
    frames = np.zeros((p.length, FRAME_DIM), dtype=np.float32)
    height = np.full(p.length, REST_HEIGHT, dtype=np.float32)
    vx = np.zeros(p.length, dtype=np.float32)
    vz = np.zeros(p.length, dtype=np.float32)
    contacts = np.ones((p.length, 4), dtype=np.float32)

    if scenario == "approach":
        vz = speed
    elif scenario == "retreat":
        vz = -speed
    elif scenario == "dodge_left":
        vx = -speed
    elif scenario == "dodge_right":
        vx = speed
    elif scenario == "duck":
        height = REST_HEIGHT - 0.30 * kappa * env
    elif scenario == "jump":
        rel = (t - onset).astype(np.float32)
        pulse = np.exp(-((rel - 12.0) / 6.0) ** 2) * (rel >= 0)
        height = REST_HEIGHT + 0.35 * kappa * pulse.astype(np.float32)
        contacts[(pulse > 0.4), :] = 0.0

    frames[:, ROOT_ANG_VEL] = 0.0
    frames[:, ROOT_LIN_VEL] = np.stack([vx, vz], axis=1)
    frames[:, ROOT_HEIGHT] = height

    # joint-relative positions: a fixed standing template, head above the root
    template = 0.1 * np.sin(np.linspace(0.0, 3.0, 63)).astype(np.float32)
    frames[:, 4:67] = template
    frames[:, HEAD_LOCAL] = np.stack(
        [np.zeros(p.length, dtype=np.float32),
         np.full(p.length, HEAD_ABOVE_ROOT, dtype=np.float32)
         + 0.02 * np.sin(2.0 * np.pi * t / 60.0).astype(np.float32),
         np.full(p.length, 0.03, dtype=np.float32)], axis=1)

    frames[:, JOINT_ROT6D] = np.tile(_IDENTITY_6D, 21)
    dh = np.gradient(height) * p.frame_rate
    frames[:, LOCAL_VEL.start:LOCAL_VEL.start + 3] = np.stack([vx, dh, vz], axis=1)
    frames[:, FOOT_CONTACT] = contacts

    fs = FeatureStream(semantic=semantic.astype(np.float32), depth=depth)
    motion = MotionSequence(frames=frames, frame_rate=p.frame_rate)
    return fs, motion


@dataclass
class PairedSample:
    id: str
    scenario: str
    seed: int
    feature_file: str
    motion_file: str


def generate_pair(scenario: str, seed: int, out_dir, params: GeneratorParams | None = None
                  ) -> PairedSample:
    """Generate one episode and write its "ERFS"/"ERMO" files under out_dir."""
    import os

    fs, motion = generate_arrays(scenario, seed, params)
    sample_id = f"{scenario}_{seed:06d}"
    feature_file = f"{sample_id}.erfs"
    motion_file = f"{sample_id}.ermo"
    write_feature_stream(os.path.join(out_dir, feature_file), fs)
    write_motion(os.path.join(out_dir, motion_file), motion)
    return PairedSample(id=sample_id, scenario=scenario, seed=seed,
                        feature_file=feature_file, motion_file=motion_file)
