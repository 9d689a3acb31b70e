"""Flat key-value run configuration shared by the CLI commands.

Config files are plain text, one `key = value` per line, '#' comments.
Unknown keys are rejected. Every resolved config is echoed into the run's
output directory, and artifacts are named by a content hash of config+seed.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, fields

from .fusion import FusionConfig
from .reactor import ReactorConfig, SamplingPolicy
from .vqvae import VqVaeConfig


@dataclass
class RunConfig:
    seed: int = 0
    epochs: int = 30
    batch_size: int = 16
    lr: float = 2e-4
    frame_rate: float = 30.0
    # tokenizer
    input_dim: int = 263
    code_dim: int = 512
    codebook_size: int = 1024
    downsample_rate: int = 4
    residual_blocks: int = 3
    width: int = 512
    commitment_weight: float = 0.25
    trajectory_weight: float = 20.0
    # generator transformer
    model_dim: int = 1024
    heads: int = 8
    layers: int = 8
    max_steps: int = 256
    dropout: float = 0.1
    # fusion branches
    feature_dim: int = 384
    semantic_dim: int = 384
    hidden_dim: int = 512
    depth_c1: int = 32
    depth_c2: int = 96
    use_depth: bool = True
    use_head: bool = True
    # decoding
    policy: str = "temperature"
    temperature: float = 1.0
    top_k: int = 0

    def vqvae_config(self) -> VqVaeConfig:
        return VqVaeConfig(input_dim=self.input_dim, code_dim=self.code_dim,
                           codebook_size=self.codebook_size,
                           downsample_rate=self.downsample_rate,
                           residual_blocks=self.residual_blocks, width=self.width,
                           commitment_weight=self.commitment_weight,
                           trajectory_weight=self.trajectory_weight)

    def reactor_config(self) -> ReactorConfig:
        return ReactorConfig(model_dim=self.model_dim, heads=self.heads,
                             layers=self.layers, max_steps=self.max_steps,
                             dropout=self.dropout)

    def fusion_config(self) -> FusionConfig:
        return FusionConfig(feature_dim=self.feature_dim, semantic_dim=self.semantic_dim,
                            hidden_dim=self.hidden_dim,
                            depth_channels=(self.depth_c1, self.depth_c2),
                            codebook_size=self.codebook_size, dropout=self.dropout,
                            use_depth=self.use_depth, use_head=self.use_head)

    def sampling_policy(self) -> SamplingPolicy:
        return SamplingPolicy(mode=self.policy, temperature=self.temperature,
                              top_k=self.top_k if self.top_k > 0 else None)

    def text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in sorted(asdict(self).items()))

    def content_hash(self) -> str:
        return hashlib.sha256(self.text().encode()).hexdigest()[:10]


def _parse_value(raw: str, kind: type):
    if kind is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"expected a boolean, got '{raw}'")
    return kind(raw)


def parse_config(text: str, overrides: dict | None = None) -> RunConfig:
    known = {f.name: f.type for f in fields(RunConfig)}
    types = {name: type(getattr(RunConfig(), name)) for name in known}
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got '{line}'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ValueError(f"config line {lineno}: unknown key '{key}'")
        values[key] = _parse_value(raw, types[key])
    for key, value in (overrides or {}).items():
        if key not in known:
            raise ValueError(f"unknown config key '{key}'")
        if value is not None:
            values[key] = value
    return RunConfig(**values)


def load_config(path, overrides: dict | None = None) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read(), overrides)
