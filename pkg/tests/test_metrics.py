import numpy as np
import pytest

from reactgen.metrics import (
    GaussianFit,
    MotionFeatureExtractor,
    bootstrap_ci,
    diversity,
    fid,
    fit_gaussian,
    head_traj_error,
    multimodality,
)
from reactgen.motion import FRAME_DIM, HEAD_LOCAL, MotionSequence
from tests.conftest import random_motion


def denman_beavers_sqrt(a: np.ndarray, iters: int = 60) -> np.ndarray:
    """Independent matrix square root oracle: Y_{k+1} = (Y_k + Z_k^-1)/2,
    Z_{k+1} = (Z_k + Y_k^-1)/2 converges to (sqrt(A), sqrt(A)^-1)."""
    y, z = a.copy(), np.eye(a.shape[0])
    for _ in range(iters):
        y_next = 0.5 * (y + np.linalg.inv(z))
        z = 0.5 * (z + np.linalg.inv(y))
        y = y_next
    return y


def random_spd(rng: np.random.Generator, d: int = 4) -> np.ndarray:
    m = rng.normal(size=(d, d))
    return m @ m.T + d * np.eye(d)


class TestGaussianFit:
    def test_asymmetric_covariance_rejected(self):
        cov = np.array([[1.0, 0.5], [0.0, 1.0]])
        with pytest.raises(ValueError, match="symmetric"):
            GaussianFit(mean=np.zeros(2), cov=cov)

    def test_unbiased_covariance(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(50, 3))
        fit = fit_gaussian(x)
        assert np.allclose(fit.cov, np.cov(x, rowvar=False))

    def test_too_few_rows_rejected(self):
        with pytest.raises(ValueError):
            fit_gaussian(np.zeros((1, 3)))


class TestFid:
    def test_identical_fits_zero(self):
        rng = np.random.default_rng(1)
        fit = fit_gaussian(rng.normal(size=(30, 4)))
        assert abs(fid(fit, fit)) < 1e-9

    def test_univariate_analytic(self):
        a = GaussianFit(mean=[0.0], cov=[[1.0]])
        b = GaussianFit(mean=[3.0], cov=[[1.0]])
        assert abs(fid(a, b) - 9.0) < 1e-9

    def test_symmetry(self):
        rng = np.random.default_rng(2)
        a = fit_gaussian(rng.normal(size=(40, 5)))
        b = fit_gaussian(rng.normal(2.0, 1.5, size=(40, 5)))
        assert abs(fid(a, b) - fid(b, a)) < 1e-9

    def test_non_negative_after_clamping(self):
        rng = np.random.default_rng(3)
        # rank-deficient covariances stress the eigenvalue clamp
        x = rng.normal(size=(4, 6))
        y = rng.normal(size=(4, 6))
        assert fid(fit_gaussian(x), fit_gaussian(y)) >= 0.0

    def test_matches_denman_beavers_oracle_on_20_spd_pairs(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            ca, cb = random_spd(rng), random_spd(rng)
            mu_a, mu_b = rng.normal(size=4), rng.normal(size=4)
            got = fid(GaussianFit(mean=mu_a, cov=ca), GaussianFit(mean=mu_b, cov=cb))
            cross_sqrt = denman_beavers_sqrt(ca @ cb)
            expected = (np.sum((mu_a - mu_b) ** 2) + np.trace(ca) + np.trace(cb)
                        - 2.0 * np.trace(cross_sqrt))
            assert abs(got - expected) < 1e-6

    def test_dimension_mismatch_rejected(self):
        a = GaussianFit(mean=np.zeros(2), cov=np.eye(2))
        b = GaussianFit(mean=np.zeros(3), cov=np.eye(3))
        with pytest.raises(ValueError, match="mismatch"):
            fid(a, b)


class TestDiversity:
    def test_degenerate_set_zero(self):
        feats = np.tile(np.arange(4.0), (10, 1))
        assert diversity(feats, sample_pairs=5) == 0.0

    def test_two_features_one_pair(self):
        feats = np.array([[0.0, 0.0], [3.0, 4.0]])
        assert diversity(feats, sample_pairs=1) == pytest.approx(5.0)

    def test_matches_exhaustive_mean(self):
        rng = np.random.default_rng(5)
        feats = rng.normal(size=(12, 6))
        exhaustive = []
        for i in range(12):
            for j in range(i + 1, 12):
                exhaustive.append(np.linalg.norm(feats[i] - feats[j]))
        assert diversity(feats, sample_pairs=10_000) == pytest.approx(np.mean(exhaustive))

    def test_permutation_invariance(self):
        rng = np.random.default_rng(6)
        feats = rng.normal(size=(15, 4))
        perm = rng.permutation(15)
        assert diversity(feats, 20, seed=1) == diversity(feats[perm], 20, seed=1)

    def test_too_few_rejected(self):
        with pytest.raises(ValueError):
            diversity(np.zeros((1, 3)), 1)


class TestMultimodality:
    def test_deterministic_generator_collapses_to_zero(self):
        gen = lambda condition, sub_seed: np.full(8, float(condition))
        assert multimodality(gen, conditions=[1, 2], repeats=3) == 0.0

    def test_r2_equals_single_pair_distance(self):
        def gen(condition, sub_seed):
            return np.array([float(sub_seed % 2), 0.0])
        rng_probe = np.random.default_rng(0)
        value = multimodality(gen, conditions=[0], repeats=2, seed=0)
        seeds = np.random.default_rng(0).integers(0, 2 ** 31 - 1, size=2)
        f = [gen(0, int(s)) for s in seeds]
        assert value == pytest.approx(np.linalg.norm(f[0] - f[1]))

    def test_white_noise_concentration(self):
        n, sigma = 256, 1.0
        def gen(condition, sub_seed):
            return np.random.default_rng(sub_seed).normal(0, sigma, size=n)
        value = multimodality(gen, conditions=list(range(10)), repeats=6, seed=7)
        assert abs(value - np.sqrt(2 * n) * sigma) < 0.1 * np.sqrt(2 * n)

    def test_greedy_rejected(self):
        with pytest.raises(ValueError, match="greedy"):
            multimodality(lambda c, s: np.zeros(2), [0], 2, stochastic=False)

    def test_too_few_repeats_rejected(self):
        with pytest.raises(ValueError, match="repeats"):
            multimodality(lambda c, s: np.zeros(2), [0], 1)


class TestHeadTrajError:
    def zero_motion(self, t=10, head=(0.0, 1.5, 0.0)):
        f = np.zeros((t, FRAME_DIM), dtype=np.float32)
        f[:, HEAD_LOCAL] = head
        return MotionSequence(frames=f)

    def test_identity_zero(self):
        m = self.zero_motion()
        assert head_traj_error(m, m) == 0.0

    def test_constant_offset_10cm(self):
        ref = self.zero_motion()
        pred = self.zero_motion(head=(0.10, 1.5, 0.0))
        assert head_traj_error(pred, ref) == pytest.approx(10.0, abs=1e-4)

    def test_3_4_5_triangle(self):
        ref = self.zero_motion()
        pred = self.zero_motion(head=(0.03, 1.5, 0.04))
        assert head_traj_error(pred, ref) == pytest.approx(5.0, abs=1e-4)

    def test_rigid_translation_invariance(self):
        rng = np.random.default_rng(7)
        ref = random_motion(rng, t=8)
        pred = random_motion(rng, t=8)
        # keep headings at zero so a constant local offset is a world translation
        ref.frames[:, 0] = 0.0
        pred.frames[:, 0] = 0.0
        base = head_traj_error(pred, ref)
        # shift both head locals by the same constant offset
        shift = np.array([0.2, -0.1, 0.4], dtype=np.float32)
        ref2 = MotionSequence(frames=ref.frames.copy())
        pred2 = MotionSequence(frames=pred.frames.copy())
        ref2.frames[:, HEAD_LOCAL] += shift
        pred2.frames[:, HEAD_LOCAL] += shift
        assert head_traj_error(pred2, ref2) == pytest.approx(base, rel=1e-7)

    def test_length_mismatch_truncates_with_warning(self):
        ref = self.zero_motion(t=10)
        pred = self.zero_motion(t=6)
        with pytest.warns(UserWarning, match="truncating"):
            assert head_traj_error(pred, ref) == 0.0


class TestBootstrap:
    def test_ci_brackets_mean_of_clean_data(self):
        rng = np.random.default_rng(8)
        values = rng.normal(10.0, 1.0, size=200)
        lo, hi = bootstrap_ci(values, np.mean, resamples=100, seed=0)
        assert lo < values.mean() < hi

    def test_width_shrinks_with_more_resamples(self):
        rng = np.random.default_rng(9)
        values = rng.normal(0.0, 1.0, size=60)
        lo20, hi20 = bootstrap_ci(values, np.mean, resamples=20, seed=3)
        lo200, hi200 = bootstrap_ci(values, np.mean, resamples=200, seed=3)
        assert (hi200 - lo200) <= (hi20 - lo20)


class TestFeatureExtractor:
    def test_deterministic_fixed_dim(self, tiny_vqvae):
        extractor = MotionFeatureExtractor(tiny_vqvae)
        m = random_motion(np.random.default_rng(10), t=20)
        f1, f2 = extractor(m), extractor(m)
        assert f1.shape == (tiny_vqvae.cfg.code_dim,)
        assert np.array_equal(f1, f2)

    def test_ground_truth_self_comparison(self, tiny_vqvae):
        # evaluating real features against themselves: FID 0, trajectory error 0
        extractor = MotionFeatureExtractor(tiny_vqvae)
        rng = np.random.default_rng(11)
        # more motions than feature dimensions so the covariance is full rank
        motions = [random_motion(rng, t=20) for _ in range(40)]
        feats = np.stack([extractor(m) for m in motions])
        fit = fit_gaussian(feats)
        assert abs(fid(fit, fit)) < 1e-9
        assert head_traj_error(motions[0], motions[0]) == 0.0
