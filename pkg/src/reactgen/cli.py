"""Command-line entry points: data generation, training, streaming generation,
evaluation, and file inspection.

Exit codes: 0 success, 2 usage/validation failure, 3 numeric failure
(training divergence). ER_THREADS caps op-internal parallelism.
"""

from __future__ import annotations

import csv
import json
import os
import sys

import click
import numpy as np
import torch

from .config import RunConfig, load_config
from .data.formats import (
    FileFormatError,
    read_feature_stream,
    read_motion,
    write_motion,
)
from .data.manifest import build_manifest, load_manifest, save_manifest
from .data.synthetic import SCENARIOS, GeneratorParams, generate_pair
from .engine import run_offline
from .metrics import evaluate_model
from .motion import MotionSequence
from .reactor import Reactor
from .training import prepare_sample, train_reactor
from .vqvae import DivergenceError, MotionVqVae, train_vqvae

EXIT_VALIDATION = 2
EXIT_NUMERIC = 3


def _apply_thread_cap() -> None:
    cap = os.environ.get("ER_THREADS")
    if cap:
        torch.set_num_threads(max(1, int(cap)))


def _load_run_config(config_path, **overrides) -> RunConfig:
    try:
        if config_path:
            return load_config(config_path, overrides)
        from .config import parse_config
        return parse_config("", overrides)
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc


def _echo_config(cfg: RunConfig, out_dir) -> str:
    tag = cfg.content_hash()
    with open(os.path.join(out_dir, f"config_{tag}.txt"), "w") as fh:
        fh.write(cfg.text())
    return tag


def _write_curve(path, curve: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(curve[0].keys()))
        writer.writeheader()
        writer.writerows(curve)


@click.group()
def main() -> None:
    """Streaming egocentric reaction-motion generation toolkit."""
    _apply_thread_cap()


@main.command("make-data")
@click.option("--scenarios", default=",".join(SCENARIOS), show_default=True,
              help="Comma-separated scenario names.")
@click.option("--count", type=int, required=True, help="Total number of samples.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--length", type=int, default=152, show_default=True)
@click.option("--semantic-dim", type=int, default=384, show_default=True)
@click.option("--depth-size", type=int, default=16, show_default=True)
@click.option("--ratio", default="4:1", show_default=True)
@click.option("--out", type=click.Path(), required=True)
def make_data(scenarios, count, seed, length, semantic_dim, depth_size, ratio, out):
    """Generate a deterministic synthetic paired dataset plus its manifest."""
    names = [s.strip() for s in scenarios.split(",") if s.strip()]
    for name in names:
        if name not in SCENARIOS:
            raise click.UsageError(f"unknown scenario '{name}', expected one of {SCENARIOS}")
    os.makedirs(out, exist_ok=True)
    params = GeneratorParams(length=length, semantic_dim=semantic_dim,
                             depth_size=(depth_size, depth_size))
    samples = [generate_pair(names[i % len(names)], seed * 1_000_003 + i, out, params)
               for i in range(count)]
    try:
        manifest = build_manifest(samples, ratio=ratio, seed=seed,
                                  generator_params={"length": length,
                                                    "semantic_dim": semantic_dim,
                                                    "depth_size": depth_size,
                                                    "seed": seed})
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc
    save_manifest(os.path.join(out, "manifest.json"), manifest)
    click.echo(f"wrote {count} samples ({len(manifest.ids('train'))} train / "
               f"{len(manifest.ids('test'))} test) to {out}")


@main.command("train-vqvae")
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--data", type=click.Path(exists=True), required=True,
              help="Dataset directory containing manifest.json.")
@click.option("--out", type=click.Path(), required=True)
@click.option("--epochs", type=int, default=None)
@click.option("--seed", type=int, default=None)
def train_vqvae_cmd(config_path, data, out, epochs, seed):
    """Train the motion tokenizer on the manifest's train split."""
    cfg = _load_run_config(config_path, epochs=epochs, seed=seed)
    os.makedirs(out, exist_ok=True)
    tag = _echo_config(cfg, out)
    manifest = load_manifest(os.path.join(data, "manifest.json"))
    motions = [read_motion(os.path.join(data, s.motion_file)) for s in manifest.subset("train")]
    ckpt = os.path.join(out, f"vqvae_{tag}.erck")
    try:
        model, curve = train_vqvae(motions, cfg.vqvae_config(), epochs=cfg.epochs,
                                   lr=cfg.lr, batch_size=cfg.batch_size, seed=cfg.seed,
                                   log=lambda row: click.echo(str(row)))
    except DivergenceError as exc:
        recovered = MotionVqVae(cfg.vqvae_config())
        recovered.load_state_dict(exc.last_good_state)
        recovered.save(ckpt)
        click.echo(f"training diverged: {exc}; last good checkpoint kept at {ckpt}", err=True)
        sys.exit(EXIT_NUMERIC)
    model.save(ckpt)
    _write_curve(os.path.join(out, f"vqvae_{tag}_loss.csv"), curve)
    click.echo(f"checkpoint: {ckpt}")


@main.command("train-reactor")
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--vqvae", "vqvae_path", type=click.Path(), required=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--epochs", type=int, default=None)
@click.option("--seed", type=int, default=None)
def train_reactor_cmd(config_path, data, vqvae_path, out, epochs, seed):
    """Train the autoregressive reactor against a frozen tokenizer checkpoint."""
    if not os.path.exists(vqvae_path):
        raise click.UsageError(f"missing dependency: tokenizer checkpoint '{vqvae_path}' "
                               "(run train-vqvae first)")
    cfg = _load_run_config(config_path, epochs=epochs, seed=seed)
    os.makedirs(out, exist_ok=True)
    tag = _echo_config(cfg, out)
    vq = MotionVqVae.load(vqvae_path)
    manifest = load_manifest(os.path.join(data, "manifest.json"))
    fusion_cfg = cfg.fusion_config()
    fusion_cfg.codebook_size = vq.cfg.codebook_size
    reactor = Reactor(cfg.reactor_config(), fusion_cfg, downsample_rate=vq.cfg.downsample_rate)
    prepared = [prepare_sample(read_feature_stream(os.path.join(data, s.feature_file)),
                               read_motion(os.path.join(data, s.motion_file)),
                               vq, reactor.fusion.bos_id)
                for s in manifest.subset("train")]
    ckpt = os.path.join(out, f"reactor_{tag}.erck")
    try:
        curve = train_reactor(prepared, reactor, epochs=cfg.epochs, lr=cfg.lr,
                              batch_size=cfg.batch_size, seed=cfg.seed,
                              log=lambda row: click.echo(str(row)))
    except DivergenceError as exc:
        reactor.load_state_dict(exc.last_good_state)
        reactor.save(ckpt)
        click.echo(f"training diverged: {exc}; last good checkpoint kept at {ckpt}", err=True)
        sys.exit(EXIT_NUMERIC)
    reactor.save(ckpt)
    _write_curve(os.path.join(out, f"reactor_{tag}_loss.csv"), curve)
    click.echo(f"checkpoint: {ckpt}")


@main.command("generate")
@click.option("--stream", type=click.Path(exists=True), required=True)
@click.option("--vqvae", "vqvae_path", type=click.Path(exists=True), required=True)
@click.option("--reactor", "reactor_path", type=click.Path(exists=True), required=True)
@click.option("--policy", type=click.Choice(["greedy", "temperature"]), default="greedy",
              show_default=True)
@click.option("--temperature", type=float, default=1.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True, help="Output motion (.ermo) path.")
@click.option("--latency", "latency_path", type=click.Path(),
              help="Optional latency ledger (.jsonl) path.")
def generate_cmd(stream, vqvae_path, reactor_path, policy, temperature, seed, out, latency_path):
    """Stream a feature file through the engine and write the decoded motion."""
    from .reactor import SamplingPolicy

    try:
        fs = read_feature_stream(stream)
        vq = MotionVqVae.load(vqvae_path)
        reactor = Reactor.load(reactor_path)
    except (FileFormatError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)
    frames, ledger = run_offline(vq, reactor, fs,
                                 policy=SamplingPolicy(mode=policy, temperature=temperature),
                                 seed=seed)
    if frames.shape[0] > 0:
        write_motion(out, MotionSequence(frames=frames))
    else:
        open(out, "wb").close()
        click.echo("empty stream: wrote empty motion placeholder")
    if latency_path:
        with open(latency_path, "w") as fh:
            for rec in ledger:
                fh.write(json.dumps({"token_index": rec.token_index,
                                     "window_close_ms": rec.window_close_ms,
                                     "emit_ms": rec.emit_ms}) + "\n")
    click.echo(f"generated {frames.shape[0]} frames, {len(ledger)} tokens")


@main.command("evaluate")
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), required=True)
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--vqvae", "vqvae_path", type=click.Path(exists=True), required=True)
@click.option("--reactor", "reactor_path", type=click.Path(exists=True), required=True)
@click.option("--policy", type=click.Choice(["greedy", "temperature"]), default="temperature",
              show_default=True)
@click.option("--temperature", type=float, default=1.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--max-samples", type=int, default=None)
@click.option("--report", "report_path", type=click.Path(), required=True)
def evaluate_cmd(manifest_path, data, vqvae_path, reactor_path, policy, temperature,
                 seed, max_samples, report_path):
    """Compute the metrics report on the manifest's test split."""
    from .reactor import SamplingPolicy

    try:
        manifest = load_manifest(manifest_path)
        vq = MotionVqVae.load(vqvae_path)
        reactor = Reactor.load(reactor_path)
    except (FileFormatError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)
    report = evaluate_model(vq, reactor, manifest, data,
                            policy=SamplingPolicy(mode=policy, temperature=temperature),
                            seed=seed, max_samples=max_samples)
    with open(report_path, "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
        fh.write("\n")
    click.echo(json.dumps(report, indent=1, sort_keys=True))


@main.command("inspect")
@click.argument("path", type=click.Path(exists=True))
def inspect_cmd(path):
    """Print header information for an ERMO / ERFS / ERCK file."""
    from .nn.checkpoint import CheckpointFormatError, load_checkpoint

    try:
        with open(path, "rb") as fh:
            magic = fh.read(4)
        if magic == b"ERMO":
            m = read_motion(path)
            click.echo(f"motion: {len(m)} frames x {m.frames.shape[1]}, "
                       f"{m.frame_rate:g} fps")
        elif magic == b"ERFS":
            fs = read_feature_stream(path)
            click.echo(f"feature stream: {len(fs)} frames, semantic {fs.semantic.shape[1]}, "
                       f"depth {fs.depth.shape[1]}x{fs.depth.shape[2]}")
        elif magic == b"ERCK":
            tensors, meta = load_checkpoint(path)
            click.echo(f"checkpoint: {len(tensors)} tensors, meta {meta}")
        else:
            click.echo(f"error: unknown magic {magic!r}", err=True)
            sys.exit(EXIT_VALIDATION)
    except (FileFormatError, CheckpointFormatError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)


if __name__ == "__main__":
    main()
