import struct

import numpy as np
import pytest

from reactgen.data.formats import (
    FeatureStream,
    FileFormatError,
    read_feature_stream,
    read_motion,
    write_feature_stream,
    write_motion,
)
from reactgen.data.manifest import (
    build_manifest,
    load_manifest,
    parse_ratio,
    save_manifest,
)
from reactgen.data.synthetic import (
    ONSET_DEPTH,
    SCENARIOS,
    GeneratorParams,
    generate_arrays,
    generate_pair,
    scenario_basis,
)
from reactgen.motion import MotionSequence
from tests.conftest import random_motion, tiny_gen_params


class TestMotionFormat:
    def test_round_trip_bit_exact(self, tmp_path):
        m = random_motion(np.random.default_rng(0), t=12, frame_rate=25.0)
        path = tmp_path / "m.ermo"
        write_motion(path, m)
        back = read_motion(path)
        assert back.frame_rate == m.frame_rate
        assert np.array_equal(back.frames, m.frames)

    def test_write_read_write_byte_identical(self, tmp_path):
        m = random_motion(np.random.default_rng(1), t=9)
        p1, p2 = tmp_path / "a.ermo", tmp_path / "b.ermo"
        write_motion(p1, m)
        write_motion(p2, read_motion(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic_rejected_before_payload(self, tmp_path):
        path = tmp_path / "bad.ermo"
        # header claims a huge frame count; the magic gate must fire first
        path.write_bytes(b"XXXX" + struct.pack("<IfII", 1, 30.0, 2 ** 30, 263))
        with pytest.raises(FileFormatError, match="magic"):
            read_motion(path)

    def test_truncation_names_lengths(self, tmp_path):
        m = random_motion(np.random.default_rng(2), t=6)
        path = tmp_path / "m.ermo"
        write_motion(path, m)
        blob = path.read_bytes()
        path.write_bytes(blob[:-40])
        with pytest.raises(FileFormatError, match="expected"):
            read_motion(path)

    def test_wrong_dim_rejected(self, tmp_path):
        path = tmp_path / "m.ermo"
        path.write_bytes(b"ERMO" + struct.pack("<IfII", 1, 30.0, 1, 100))
        with pytest.raises(FileFormatError, match="263"):
            read_motion(path)


class TestFeatureStreamFormat:
    def make(self, t=5):
        rng = np.random.default_rng(3)
        return FeatureStream(semantic=rng.normal(size=(t, 16)).astype(np.float32),
                             depth=rng.uniform(0.5, 5, size=(t, 8, 8)).astype(np.float32))

    def test_round_trip_bit_exact(self, tmp_path):
        fs = self.make()
        path = tmp_path / "s.erfs"
        write_feature_stream(path, fs)
        back = read_feature_stream(path)
        assert np.array_equal(back.semantic, fs.semantic)
        assert np.array_equal(back.depth, fs.depth)

    def test_write_read_write_byte_identical(self, tmp_path):
        fs = self.make()
        p1, p2 = tmp_path / "a.erfs", tmp_path / "b.erfs"
        write_feature_stream(p1, fs)
        write_feature_stream(p2, read_feature_stream(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.erfs"
        path.write_bytes(b"NOPE" + struct.pack("<IIIII", 1, 2 ** 28, 384, 64, 64))
        with pytest.raises(FileFormatError, match="magic"):
            read_feature_stream(path)

    def test_truncation(self, tmp_path):
        fs = self.make()
        path = tmp_path / "s.erfs"
        write_feature_stream(path, fs)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(FileFormatError, match="expected"):
            read_feature_stream(path)

    def test_frame_count_mismatch_rejected(self):
        with pytest.raises(ValueError, match="differ"):
            FeatureStream(semantic=np.zeros((3, 4), dtype=np.float32),
                          depth=np.zeros((2, 8, 8), dtype=np.float32))


class TestGenerator:
    def test_byte_identical_files(self, tmp_path):
        d1, d2 = tmp_path / "a", tmp_path / "b"
        d1.mkdir(), d2.mkdir()
        s1 = generate_pair("duck", seed=11, out_dir=d1, params=tiny_gen_params())
        s2 = generate_pair("duck", seed=11, out_dir=d2, params=tiny_gen_params())
        assert (d1 / s1.feature_file).read_bytes() == (d2 / s2.feature_file).read_bytes()
        assert (d1 / s1.motion_file).read_bytes() == (d2 / s2.motion_file).read_bytes()

    def test_unknown_scenario_rejected(self):
        with pytest.raises(ValueError, match="unknown scenario"):
            generate_arrays("moonwalk", seed=0, params=tiny_gen_params())

    def test_paired_lengths_match(self):
        fs, motion = generate_arrays("jump", seed=0, params=tiny_gen_params())
        assert len(fs) == len(motion) == 152

    def test_approach_min_depth_non_increasing_until_onset(self):
        fs, _ = generate_arrays("approach", seed=5, params=tiny_gen_params())
        min_depth = fs.depth.reshape(len(fs), -1).min(axis=1)
        onset = int(np.argmax(min_depth < ONSET_DEPTH))
        assert onset > 0
        diffs = np.diff(min_depth[:onset + 1])
        assert (diffs <= 1e-6).all()

    def test_nearest_centroid_classifier_is_perfect(self):
        params = tiny_gen_params(length=40)
        feats, labels = [], []
        for scenario in SCENARIOS:
            for seed in range(5):
                fs, _ = generate_arrays(scenario, seed, params)
                feats.append(fs.semantic.mean(axis=0))
                labels.append(scenario)
        feats = np.stack(feats)
        centroids = {s: feats[[l == s for l in labels]].mean(axis=0) for s in SCENARIOS}
        for f, label in zip(feats, labels):
            best = min(SCENARIOS, key=lambda s: np.linalg.norm(f - centroids[s]))
            assert best == label

    def test_scenario_basis_blocks_disjoint(self):
        vs = [scenario_basis(s, 384) for s in SCENARIOS]
        for i in range(len(vs)):
            for j in range(i + 1, len(vs)):
                assert float(vs[i] @ vs[j]) == 0.0

    def test_motion_is_valid_and_reactive(self):
        fs, motion = generate_arrays("retreat", seed=2, params=tiny_gen_params())
        assert isinstance(motion, MotionSequence)
        # reaction exists: some nonzero root velocity after onset
        assert np.abs(motion.frames[:, 1:3]).max() > 0.1
        # foot contacts bounded
        assert motion.frames[:, 259:263].min() >= 0.0
        assert motion.frames[:, 259:263].max() <= 1.0

    def test_too_short_rejected(self):
        with pytest.raises(ValueError, match="too short"):
            generate_arrays("duck", seed=0, params=GeneratorParams(length=4))


def fake_samples(per_scenario: int):
    from reactgen.data.synthetic import PairedSample
    out = []
    for scenario in SCENARIOS:
        for seed in range(per_scenario):
            sid = f"{scenario}_{seed:06d}"
            out.append(PairedSample(id=sid, scenario=scenario, seed=seed,
                                    feature_file=sid + ".erfs",
                                    motion_file=sid + ".ermo"))
    return out


class TestManifest:
    def test_parse_ratio(self):
        assert parse_ratio("4:1") == pytest.approx(0.2)
        with pytest.raises(ValueError):
            parse_ratio("4")
        with pytest.raises(ValueError):
            parse_ratio("4:0")

    def test_3500_splits_2800_700(self):
        # 3500 samples across 6 scenarios: 583/584 per scenario
        from reactgen.data.synthetic import PairedSample
        samples = []
        for i in range(3500):
            scenario = SCENARIOS[i % len(SCENARIOS)]
            samples.append(PairedSample(id=f"s{i:05d}", scenario=scenario, seed=i,
                                        feature_file="f", motion_file="m"))
        manifest = build_manifest(samples, ratio="4:1", seed=0)
        assert len(manifest.ids("train")) == 2800
        assert len(manifest.ids("test")) == 700

    def test_10_samples_split_8_2(self):
        from reactgen.data.synthetic import PairedSample
        samples = [PairedSample(id=f"s{i}", scenario=SCENARIOS[i % 2], seed=i,
                                feature_file="f", motion_file="m") for i in range(10)]
        manifest = build_manifest(samples, ratio="4:1", seed=0)
        assert len(manifest.ids("train")) == 8
        assert len(manifest.ids("test")) == 2

    def test_split_deterministic(self):
        samples = fake_samples(10)
        m1 = build_manifest(samples, seed=3)
        m2 = build_manifest(samples, seed=3)
        assert m1.split == m2.split

    def test_split_disjoint_and_covering(self):
        samples = fake_samples(7)
        manifest = build_manifest(samples, seed=1)
        train, test = set(manifest.ids("train")), set(manifest.ids("test"))
        assert train & test == set()
        assert train | test == {s.id for s in samples}

    def test_stratified_by_scenario(self):
        samples = fake_samples(10)
        manifest = build_manifest(samples, ratio="4:1", seed=0)
        for scenario in SCENARIOS:
            test_n = sum(1 for s in manifest.subset("test") if s.scenario == scenario)
            assert test_n == 2

    def test_too_few_samples_rejected(self):
        with pytest.raises(ValueError, match="at least 5"):
            build_manifest(fake_samples(1)[:4])

    def test_single_sample_scenario_rejected(self):
        samples = fake_samples(2)
        samples = [s for s in samples if not (s.scenario == "jump" and s.seed == 1)]
        with pytest.raises(ValueError, match="jump"):
            build_manifest(samples)

    def test_save_load_round_trip(self, tmp_path):
        manifest = build_manifest(fake_samples(3), ratio="4:1", seed=5,
                                  generator_params={"length": 152})
        path = tmp_path / "manifest.json"
        save_manifest(path, manifest)
        back = load_manifest(path)
        assert back.split == manifest.split
        assert back.ratio == manifest.ratio
        assert back.seed == manifest.seed
        assert [s.id for s in back.samples] == [s.id for s in manifest.samples]
        assert back.generator_params == {"length": 152}
