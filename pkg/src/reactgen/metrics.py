"""Evaluation metrics: FID, diversity, multimodality, global head-trajectory
error, and latency aggregation, plus the end-to-end model evaluation report.

The motion feature space is the frozen trained tokenizer encoder followed by
temporal mean pooling; absolute values are therefore artifact-specific, and
only orderings and self-consistency are meaningful.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import torch

from .motion import MotionSequence, head_trajectory
from .vqvae import MotionVqVae

EIG_CLAMP = 1e-8


class MotionFeatureExtractor:
    """Frozen tokenizer encoder + temporal mean pooling -> one vector per motion."""

    def __init__(self, vqvae: MotionVqVae):
        self.vqvae = vqvae.eval()

    @torch.no_grad()
    def __call__(self, m: MotionSequence) -> np.ndarray:
        z = self.vqvae.encode(m)
        return z.mean(dim=0).numpy().astype(np.float64)


@dataclass
class GaussianFit:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        self.cov = np.asarray(self.cov, dtype=np.float64)
        d = self.mean.shape[0]
        if self.cov.shape != (d, d):
            raise ValueError(f"covariance shape {self.cov.shape} != ({d}, {d})")
        if np.abs(self.cov - self.cov.T).max() > 1e-9:
            raise ValueError("covariance not symmetric within 1e-9")
        self.cov = 0.5 * (self.cov + self.cov.T)


def fit_gaussian(features: np.ndarray) -> GaussianFit:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 2:
        raise ValueError(f"need [N>=2, d] features, got {features.shape}")
    mean = features.mean(axis=0)
    cov = np.cov(features, rowvar=False)          # unbiased (n-1) normalization
    cov = np.atleast_2d(cov)
    return GaussianFit(mean=mean, cov=cov)


def _clamped_psd_sqrt_eigs(sym: np.ndarray) -> np.ndarray:
    eig = np.linalg.eigvalsh(0.5 * (sym + sym.T))
    if eig.min() < -EIG_CLAMP * max(1.0, float(eig.max())):
        warnings.warn(f"matrix has a significantly negative eigenvalue {eig.min():.3e}; "
                      "clamping to zero")
    return np.sqrt(np.maximum(eig, 0.0))


def _sym_sqrt(sym: np.ndarray) -> np.ndarray:
    eig, vec = np.linalg.eigh(0.5 * (sym + sym.T))
    eig = np.where(eig < 0.0, 0.0, eig)
    return (vec * np.sqrt(eig)) @ vec.T


def fid(fit_a: GaussianFit, fit_b: GaussianFit) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}).

    The cross term is computed as Tr sqrt(sqrt(S_a) S_b sqrt(S_a)), a symmetric
    PSD reformulation with the same trace; negative eigenvalues from numerical
    rank deficiency are clamped to zero.
    """
    if fit_a.mean.shape != fit_b.mean.shape:
        raise ValueError(f"dimension mismatch: {fit_a.mean.shape} vs {fit_b.mean.shape}")
    a_half = _sym_sqrt(fit_a.cov)
    cross = a_half @ fit_b.cov @ a_half
    tr_sqrt = _clamped_psd_sqrt_eigs(cross).sum()
    diff = fit_a.mean - fit_b.mean
    return float(diff @ diff + np.trace(fit_a.cov) + np.trace(fit_b.cov) - 2.0 * tr_sqrt)


def diversity(features: np.ndarray, sample_pairs: int, seed: int = 0) -> float:
    """Mean Euclidean distance over seeded random distinct index pairs.

    Features are put in a canonical (lexicographic) order before pair sampling,
    so the result is invariant to input permutation. When sample_pairs covers
    every unordered pair this equals the exhaustive all-pairs mean.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 2:
        raise ValueError(f"need at least 2 features, got shape {features.shape}")
    if sample_pairs < 1:
        raise ValueError("sample_pairs must be >= 1")
    n = features.shape[0]
    features = features[np.lexsort(features.T[::-1])]
    pairs_i, pairs_j = np.triu_indices(n, k=1)
    total = len(pairs_i)
    if sample_pairs >= total:
        sel = np.arange(total)
    else:
        sel = np.random.default_rng(seed).choice(total, size=sample_pairs, replace=False)
    d = np.linalg.norm(features[pairs_i[sel]] - features[pairs_j[sel]], axis=1)
    return float(d.mean())


def multimodality(generate, conditions: list, repeats: int, seed: int = 0,
                  stochastic: bool = True) -> float:
    """Per-condition mean pairwise feature distance over repeated generations.

    generate(condition, sub_seed) must return one feature vector; with a
    deterministic policy the metric is undefined and rejected.
    """
    if repeats < 2:
        raise ValueError("multimodality needs at least 2 repeats")
    if not stochastic:
        raise ValueError("multimodality is undefined for deterministic (greedy) decoding")
    rng = np.random.default_rng(seed)
    per_condition = []
    for condition in conditions:
        sub_seeds = rng.integers(0, 2 ** 31 - 1, size=repeats)
        feats = np.stack([np.asarray(generate(condition, int(s)), dtype=np.float64)
                          for s in sub_seeds])
        i, j = np.triu_indices(repeats, k=1)
        per_condition.append(np.linalg.norm(feats[i] - feats[j], axis=1).mean())
    return float(np.mean(per_condition))


def head_traj_error(pred: MotionSequence, ref: MotionSequence) -> float:
    """Mean global head-position distance, in centimeters."""
    n = min(len(pred), len(ref))
    if n == 0:
        raise ValueError("empty trajectory overlap")
    if len(pred) != len(ref):
        warnings.warn(f"length mismatch ({len(pred)} vs {len(ref)}); truncating to {n}")
    hp = head_trajectory(pred)[:n]
    hr = head_trajectory(ref)[:n]
    return float(np.linalg.norm(hp - hr, axis=1).mean() * 100.0)


# -- report machinery ---------------------------------------------------------

def bootstrap_ci(values: np.ndarray, statistic, resamples: int = 50, seed: int = 0,
                 level: float = 0.95) -> tuple[float, float]:
    """Percentile bootstrap CI of `statistic` over rows of `values`."""
    values = np.asarray(values)
    rng = np.random.default_rng(seed)
    stats = []
    for _ in range(max(20, resamples)):
        idx = rng.integers(0, len(values), size=len(values))
        stats.append(statistic(values[idx]))
    lo = (1.0 - level) / 2.0
    return (float(np.quantile(stats, lo)), float(np.quantile(stats, 1.0 - lo)))


def _entry(value: float, ci: tuple[float, float], n: int) -> dict:
    return {"value": float(value), "ci_low": ci[0], "ci_high": ci[1], "n": int(n)}


def evaluate_model(vqvae: MotionVqVae, reactor, manifest, data_dir, policy=None,
                   seed: int = 0, max_samples: int | None = None,
                   mm_conditions: int = 5, mm_repeats: int = 4,
                   bootstrap_resamples: int = 50, ffl_runs: int = 20,
                   diversity_pairs: int = 200) -> dict:
    """Full metrics report over a manifest's test split. Returns the JSON-ready
    {metric: {value, ci_low, ci_high, n}} mapping (plus a notes list)."""
    import os

    from .data.formats import read_feature_stream, read_motion
    from .engine import StreamingEngine, measure_ffl, run_offline
    from .reactor import SamplingPolicy

    policy = policy or SamplingPolicy(mode="temperature", temperature=1.0)
    test = manifest.subset("test")
    if not test:
        raise ValueError("empty test split")
    if max_samples is not None:
        test = test[:max_samples]

    extractor = MotionFeatureExtractor(vqvae)
    real_feats, gen_feats, traj_errors = [], [], []
    streams = []
    for i, sample in enumerate(test):
        stream = read_feature_stream(os.path.join(data_dir, sample.feature_file))
        ref = read_motion(os.path.join(data_dir, sample.motion_file))
        frames, _ = run_offline(vqvae, reactor, stream, policy=policy, seed=seed + i)
        gen = MotionSequence(frames=frames, frame_rate=ref.frame_rate)
        real_feats.append(extractor(ref))
        gen_feats.append(extractor(gen))
        traj_errors.append(head_traj_error(gen, ref))
        streams.append(stream)
    real_feats = np.stack(real_feats)
    gen_feats = np.stack(gen_feats)
    traj_errors = np.asarray(traj_errors)

    def fid_stat(pair):
        return fid(fit_gaussian(pair[:, 0]), fit_gaussian(pair[:, 1]))

    paired = np.stack([real_feats, gen_feats], axis=1)
    report: dict = {}
    notes: list[str] = []
    report["fid"] = _entry(fid(fit_gaussian(real_feats), fit_gaussian(gen_feats)),
                           bootstrap_ci(paired, fid_stat, bootstrap_resamples, seed), len(test))
    report["diversity_real"] = _entry(
        diversity(real_feats, diversity_pairs, seed),
        bootstrap_ci(real_feats, lambda f: diversity(f, diversity_pairs, seed),
                     bootstrap_resamples, seed), len(test))
    report["diversity_generated"] = _entry(
        diversity(gen_feats, diversity_pairs, seed),
        bootstrap_ci(gen_feats, lambda f: diversity(f, diversity_pairs, seed),
                     bootstrap_resamples, seed), len(test))
    report["head_traj_error_cm"] = _entry(
        float(traj_errors.mean()),
        bootstrap_ci(traj_errors, np.mean, bootstrap_resamples, seed), len(test))

    if policy.stochastic:
        def generate_features(stream, sub_seed):
            frames, _ = run_offline(vqvae, reactor, stream, policy=policy, seed=sub_seed)
            return extractor(MotionSequence(frames=frames))

        conditions = streams[:mm_conditions]
        mm = multimodality(generate_features, conditions, mm_repeats, seed,
                           stochastic=policy.stochastic)
        report["multimodality"] = _entry(mm, (mm, mm), len(conditions))
    else:
        notes.append("multimodality omitted: greedy decoding is deterministic, "
                     "the metric is undefined")

    ffl = measure_ffl(lambda: StreamingEngine(vqvae, reactor, policy=policy, seed=seed),
                      streams[0], runs=ffl_runs)
    ffl_ci = bootstrap_ci(np.asarray(ffl["samples_ms"]), np.median,
                          bootstrap_resamples, seed)
    report["ffl_ms"] = _entry(ffl["median_ms"], ffl_ci, ffl["runs"])
    report["ffl_iqr_ms"] = _entry(ffl["iqr_ms"], (ffl["iqr_ms"], ffl["iqr_ms"]), ffl["runs"])
    if notes:
        report["notes"] = notes
    return report
