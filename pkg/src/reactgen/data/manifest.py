"""Dataset manifest: sample registry plus a deterministic stratified split."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .synthetic import PairedSample

MANIFEST_VERSION = 1


@dataclass
class DatasetManifest:
    samples: list[PairedSample]
    split: dict[str, str]                 # sample id -> "train" | "test"
    ratio: str = "4:1"
    seed: int = 0
    generator_params: dict = field(default_factory=dict)
    version: int = MANIFEST_VERSION

    def ids(self, which: str) -> list[str]:
        return [s.id for s in self.samples if self.split[s.id] == which]

    def subset(self, which: str) -> list[PairedSample]:
        return [s for s in self.samples if self.split[s.id] == which]


def parse_ratio(ratio: str) -> float:
    """"4:1" -> test fraction 0.2."""
    try:
        train_part, test_part = (int(x) for x in ratio.split(":"))
    except Exception:
        raise ValueError(f"ratio must look like '4:1', got '{ratio}'") from None
    if train_part <= 0 or test_part <= 0:
        raise ValueError(f"ratio parts must be positive, got '{ratio}'")
    return test_part / (train_part + test_part)


def build_manifest(samples: list[PairedSample], ratio: str = "4:1", seed: int = 0,
                   generator_params: dict | None = None) -> DatasetManifest:
    """Seeded shuffle, then a scenario-stratified split hitting the global
    ratio exactly (largest-remainder allocation of the test quota)."""
    if len(samples) < 5:
        raise ValueError(f"need at least 5 samples to split, got {len(samples)}")
    test_frac = parse_ratio(ratio)
    by_scenario: dict[str, list[PairedSample]] = {}
    for s in samples:
        by_scenario.setdefault(s.scenario, []).append(s)
    for scenario, group in by_scenario.items():
        if len(group) < 2:
            raise ValueError(f"scenario '{scenario}' has only {len(group)} sample(s); "
                             "need at least 2 per scenario to stratify")

    total_test = round(len(samples) * test_frac)
    names = sorted(by_scenario)
    quotas = np.array([len(by_scenario[n]) * test_frac for n in names])
    base = np.floor(quotas).astype(int)
    remainder = total_test - int(base.sum())
    order = np.argsort(-(quotas - base), kind="stable")
    for i in range(remainder):
        base[order[i]] += 1

    rng = np.random.default_rng(seed)
    split: dict[str, str] = {}
    for name, n_test in zip(names, base):
        group = sorted(by_scenario[name], key=lambda s: s.id)
        perm = rng.permutation(len(group))
        for rank, gi in enumerate(perm):
            split[group[gi].id] = "test" if rank < n_test else "train"
    return DatasetManifest(samples=list(samples), split=split, ratio=ratio, seed=seed,
                           generator_params=dict(generator_params or {}))


def save_manifest(path, manifest: DatasetManifest) -> None:
    payload = {
        "version": manifest.version,
        "ratio": manifest.ratio,
        "seed": manifest.seed,
        "generator_params": manifest.generator_params,
        "samples": [dict(asdict(s), split=manifest.split[s.id]) for s in manifest.samples],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_manifest(path) -> DatasetManifest:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("version") != MANIFEST_VERSION:
        raise ValueError(f"unsupported manifest version {payload.get('version')}")
    samples, split = [], {}
    for row in payload["samples"]:
        split[row["id"]] = row.pop("split")
        samples.append(PairedSample(**row))
    return DatasetManifest(samples=samples, split=split, ratio=payload["ratio"],
                           seed=payload["seed"], generator_params=payload["generator_params"])
