"""263-dim pose-feature motion representation and head kinematics.

Per-frame layout (HumanML3D-style):
    [0]        root angular velocity about the vertical axis (rad/s)
    [1:3]      root linear velocity on the ground plane, heading-local (x, z) (m/s)
    [3]        root height (m)
    [4:67]     joint-relative positions for the 21 non-root joints (21 x 3)
    [67:193]   joint rotations in 6D form (21 x 6)
    [193:259]  local joint velocities (22 x 3)
    [259:263]  foot-contact indicators in [0, 1]

Trajectory recovery integrates only the root channels; the 6D rotation block is
carried through losses but never used for kinematics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FRAME_DIM = 263
ROOT_ANG_VEL = 0
ROOT_LIN_VEL = slice(1, 3)
ROOT_HEIGHT = 3
JOINT_POS = slice(4, 67)
JOINT_ROT6D = slice(67, 193)
LOCAL_VEL = slice(193, 259)
FOOT_CONTACT = slice(259, 263)

NUM_JOINTS = 22
HEAD_JOINT = 15  # 22-joint skeleton convention; joint 0 (root) has no entry in JOINT_POS
DEFAULT_FPS = 30.0


def _head_pos_slice() -> slice:
    start = JOINT_POS.start + (HEAD_JOINT - 1) * 3
    return slice(start, start + 3)

HEAD_LOCAL = _head_pos_slice()


@dataclass
class MotionSequence:
    """frames: [T, 263] float32, T >= 1."""

    frames: np.ndarray
    frame_rate: float = DEFAULT_FPS

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 2 or self.frames.shape[1] != FRAME_DIM:
            raise ValueError(f"motion frames must be [T, {FRAME_DIM}], got {self.frames.shape}")
        if self.frames.shape[0] < 1:
            raise ValueError("motion sequence must be non-empty")
        if not self.frame_rate > 0:
            raise ValueError(f"frame_rate must be positive, got {self.frame_rate}")
        if not np.isfinite(self.frames).all():
            raise ValueError("motion frames contain non-finite values")

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def dt(self) -> float:
        return 1.0 / self.frame_rate


@dataclass
class HeadState:
    position: np.ndarray
    velocity: np.ndarray
    frame_index: int = 0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        self.velocity = np.asarray(self.velocity, dtype=np.float64).reshape(3)
        if not np.isfinite(self.velocity).all():
            raise ValueError("head velocity must be finite")
        if self.frame_index < 0:
            raise ValueError("frame_index must be >= 0")


def rot_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]], dtype=np.float64)


def global_root_trajectory(m: MotionSequence) -> list[tuple[np.ndarray, float]]:
    """Integrate root channels from (origin, heading 0).

    Frame t's velocities displace frame t itself: starting from p = 0, h = 0,
    p[t] = p[t-1] + R_y(h[t-1]) @ v_local[t] * dt and h[t] = h[t-1] + w[t] * dt,
    so N frames of constant local speed v land at distance N*v/fps. The world
    y-component is the root-height channel, not an integrated quantity.
    """
    dt = m.dt
    out: list[tuple[np.ndarray, float]] = []
    heading = 0.0
    pos_xz = np.zeros(2, dtype=np.float64)
    for t in range(len(m)):
        f = m.frames[t].astype(np.float64)
        vx, vz = f[ROOT_LIN_VEL]
        c, s = np.cos(heading), np.sin(heading)
        pos_xz = pos_xz + dt * np.array([c * vx + s * vz, -s * vx + c * vz])
        heading = heading + dt * f[ROOT_ANG_VEL]
        out.append((np.array([pos_xz[0], f[ROOT_HEIGHT], pos_xz[1]]), heading))
    return out


def head_position(m: MotionSequence, t: int) -> np.ndarray:
    """World-frame head joint position at frame t."""
    if not 0 <= t < len(m):
        raise IndexError(f"frame index {t} out of range [0, {len(m)})")
    root_pos, heading = global_root_trajectory(m)[t]
    local = m.frames[t, HEAD_LOCAL].astype(np.float64)
    return root_pos + rot_y(heading) @ local


def head_trajectory(m: MotionSequence) -> np.ndarray:
    """All head positions, [T, 3]. One trajectory integration, not T of them."""
    traj = global_root_trajectory(m)
    out = np.empty((len(m), 3), dtype=np.float64)
    for t, (root_pos, heading) in enumerate(traj):
        out[t] = root_pos + rot_y(heading) @ m.frames[t, HEAD_LOCAL].astype(np.float64)
    return out


def head_velocity(p_curr: np.ndarray, p_prev: np.ndarray, dt: float) -> np.ndarray:
    """(p_curr - p_prev) / dt. The engine substitutes (0,0,0) while no previous
    motion exists (motion frames 0 and 1)."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    return (np.asarray(p_curr, dtype=np.float64) - np.asarray(p_prev, dtype=np.float64)) / dt
