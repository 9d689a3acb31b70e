"""Shared test fixtures: toy-sized configs and small trained models.

Everything here is deliberately tiny so the unit tests stay fast; the
acceptance module builds its own larger fixtures.
"""

import numpy as np
import pytest
import torch

# single-core box: extra intra-op threads only add contention on small tensors
torch.set_num_threads(1)

from reactgen.data.synthetic import GeneratorParams, generate_arrays
from reactgen.fusion import FusionConfig
from reactgen.reactor import Reactor, ReactorConfig
from reactgen.vqvae import MotionVqVae, VqVaeConfig

SEM_DIM = 32
DEPTH_SIZE = (16, 16)


def tiny_gen_params(length: int = 152) -> GeneratorParams:
    return GeneratorParams(length=length, semantic_dim=SEM_DIM, depth_size=DEPTH_SIZE)


def tiny_vq_config(**kw) -> VqVaeConfig:
    base = dict(code_dim=16, codebook_size=32, downsample_rate=4,
                residual_blocks=1, width=32)
    base.update(kw)
    return VqVaeConfig(**base)


def tiny_fusion_config(**kw) -> FusionConfig:
    base = dict(feature_dim=32, semantic_dim=SEM_DIM, hidden_dim=48,
                depth_channels=(4, 8), codebook_size=32, dropout=0.0)
    base.update(kw)
    return FusionConfig(**base)


def tiny_reactor_config(**kw) -> ReactorConfig:
    base = dict(model_dim=32, heads=4, layers=2, max_steps=128, dropout=0.0)
    base.update(kw)
    return ReactorConfig(**base)


def make_reactor(seed: int = 0, fusion_kw: dict | None = None,
                 reactor_kw: dict | None = None) -> Reactor:
    torch.manual_seed(seed)
    return Reactor(tiny_reactor_config(**(reactor_kw or {})),
                   tiny_fusion_config(**(fusion_kw or {})), downsample_rate=4)


@pytest.fixture(scope="session")
def tiny_vqvae() -> MotionVqVae:
    """Untrained but deterministic tokenizer at toy dims."""
    torch.manual_seed(0)
    return MotionVqVae(tiny_vq_config()).eval()


@pytest.fixture(scope="session")
def tiny_reactor() -> Reactor:
    return make_reactor(seed=0).eval()


@pytest.fixture(scope="session")
def sample_pair():
    """One deterministic synthetic (features, motion) episode."""
    return generate_arrays("retreat", seed=3, params=tiny_gen_params())


def random_motion(rng: np.random.Generator, t: int = 32, frame_rate: float = 30.0):
    from reactgen.motion import MotionSequence
    return MotionSequence(frames=rng.normal(0, 0.5, size=(t, 263)).astype(np.float32),
                          frame_rate=frame_rate)
