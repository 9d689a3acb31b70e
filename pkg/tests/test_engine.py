import numpy as np
import pytest
import torch

from reactgen.data.synthetic import generate_arrays
from reactgen.engine import (
    CheckpointMismatchError,
    FrameInput,
    StreamingEngine,
    check_compatibility,
    measure_ffl,
    run_offline,
)
from reactgen.motion import head_trajectory
from reactgen.reactor import SamplingPolicy
from reactgen.vqvae import MotionVqVae
from tests.conftest import make_reactor, tiny_gen_params, tiny_vq_config


@pytest.fixture(scope="module")
def system():
    torch.manual_seed(0)
    vqvae = MotionVqVae(tiny_vq_config()).eval()
    reactor = make_reactor(seed=0).eval()
    return vqvae, reactor


@pytest.fixture(scope="module")
def stream():
    fs, _ = generate_arrays("dodge_left", seed=1, params=tiny_gen_params(length=48))
    return fs


def push_all(engine, fs, n=None):
    outputs = []
    for i in range(n if n is not None else len(fs)):
        out = engine.push_frame(FrameInput(frame_index=i, semantic=fs.semantic[i],
                                           depth=fs.depth[i]))
        if out is not None:
            outputs.append(out)
    return outputs


class TestInit:
    def test_fresh_state(self, system):
        engine = StreamingEngine(*system)
        assert engine.tokens == []
        assert engine.motion_frames.shape == (0, 263)
        assert engine.head_velocity_log == []

    def test_codebook_mismatch_rejected(self, system):
        vqvae, _ = system
        wrong = make_reactor(seed=0, fusion_kw={"codebook_size": 16})
        with pytest.raises(CheckpointMismatchError, match="codebook_size"):
            check_compatibility(vqvae, wrong)

    def test_downsample_mismatch_rejected(self, system):
        vqvae, _ = system
        torch.manual_seed(0)
        from reactgen.reactor import Reactor
        from tests.conftest import tiny_fusion_config, tiny_reactor_config
        wrong = Reactor(tiny_reactor_config(), tiny_fusion_config(), downsample_rate=8)
        with pytest.raises(CheckpointMismatchError, match="downsample_rate"):
            StreamingEngine(vqvae, wrong)


class TestWindowing:
    def test_first_three_frames_emit_nothing(self, system, stream):
        engine = StreamingEngine(*system)
        for i in range(3):
            assert engine.push_frame(FrameInput(frame_index=i,
                                                semantic=stream.semantic[i],
                                                depth=stream.depth[i])) is None
        out = engine.push_frame(FrameInput(frame_index=3, semantic=stream.semantic[3],
                                           depth=stream.depth[3]))
        assert out is not None
        assert out.frames.shape == (4, 263)
        assert out.token_index == 0

    def test_out_of_order_rejected(self, system, stream):
        engine = StreamingEngine(*system)
        engine.push_frame(FrameInput(frame_index=0, semantic=stream.semantic[0],
                                     depth=stream.depth[0]))
        with pytest.raises(ValueError, match="out-of-order"):
            engine.push_frame(FrameInput(frame_index=2, semantic=stream.semantic[2],
                                         depth=stream.depth[2]))

    def test_frame_accounting(self, system, stream):
        engine = StreamingEngine(*system)
        push_all(engine, stream, n=21)
        assert engine.motion_frames.shape[0] == 4 * (21 // 4)
        assert len(engine.tokens) == 21 // 4


class TestDeterminismAndCausality:
    def test_same_stream_twice_bit_identical(self, system, stream):
        runs = []
        for _ in range(2):
            engine = StreamingEngine(*system, policy=SamplingPolicy(mode="greedy"))
            push_all(engine, stream)
            runs.append(engine.motion_frames)
        assert np.array_equal(runs[0], runs[1])

    def test_prefix_equality(self, system, stream):
        policy = SamplingPolicy(mode="greedy")
        full_engine = StreamingEngine(*system, policy=policy)
        push_all(full_engine, stream)
        full = full_engine.motion_frames
        for k in (1, 3, 7):
            engine = StreamingEngine(*system, policy=policy)
            push_all(engine, stream, n=4 * k)
            prefix = engine.motion_frames
            assert prefix.shape[0] == 4 * k
            assert np.array_equal(prefix, full[:4 * k]), f"prefix {k} diverged"

    def test_offline_equals_online(self, system, stream):
        policy = SamplingPolicy(mode="greedy")
        frames, latency = run_offline(*system, stream, policy=policy)
        engine = StreamingEngine(*system, policy=policy)
        push_all(engine, stream)
        assert np.array_equal(frames, engine.motion_frames)
        assert len(latency) == len(stream) // 4

    def test_empty_stream(self, system):
        from reactgen.data.formats import FeatureStream
        empty = FeatureStream(semantic=np.zeros((0, 32), dtype=np.float32),
                              depth=np.zeros((0, 16, 16), dtype=np.float32))
        frames, latency = run_offline(*system, empty)
        assert frames.shape == (0, 263)
        assert latency == []

    def test_seeded_stochastic_runs_reproducible(self, system, stream):
        policy = SamplingPolicy(mode="temperature", temperature=1.0)
        f1, _ = run_offline(*system, stream, policy=policy, seed=5)
        f2, _ = run_offline(*system, stream, policy=policy, seed=5)
        assert np.array_equal(f1, f2)


class TestHeadVelocityFeedback:
    def test_first_step_consumes_zero(self, system, stream):
        engine = StreamingEngine(*system)
        push_all(engine, stream, n=4)
        assert len(engine.head_velocity_log) == 1
        assert np.array_equal(engine.head_velocity_log[0], np.zeros(3))

    def test_feedback_matches_decoded_trajectory(self, system, stream):
        # the velocity consumed at step s must equal the finite difference of
        # the engine's own decoded head trajectory at the last token boundary
        engine = StreamingEngine(*system, policy=SamplingPolicy(mode="greedy"))
        push_all(engine, stream)
        motion = engine.motion()
        traj = head_trajectory(motion)
        for s, logged in enumerate(engine.head_velocity_log):
            if s == 0:
                assert np.array_equal(logged, np.zeros(3))
                continue
            last = s * 4 - 1
            expected = (traj[last] - traj[last - 1]) * motion.frame_rate
            assert np.allclose(logged, expected, atol=1e-4), f"step {s}"


class TestLatency:
    def test_ledger_monotonic(self, system, stream):
        engine = StreamingEngine(*system)
        push_all(engine, stream)
        records = engine.latency
        assert len(records) == len(stream) // 4
        for r in records:
            assert r.emit_ms >= r.window_close_ms
        closes = [r.window_close_ms for r in records]
        assert closes == sorted(closes)

    def test_measure_ffl_reports_median_and_iqr(self, system, stream):
        vqvae, reactor = system
        report = measure_ffl(lambda: StreamingEngine(vqvae, reactor), stream, runs=20)
        assert report["runs"] == 20
        assert report["median_ms"] > 0
        assert report["iqr_ms"] >= 0
        assert len(report["samples_ms"]) == 20

    def test_stub_reactor_faster_than_full(self, system, stream):
        vqvae, reactor = system
        big = make_reactor(seed=0, reactor_kw={"model_dim": 256, "layers": 6, "heads": 4})

        full = measure_ffl(lambda: StreamingEngine(vqvae, big), stream, runs=10)

        class StubEngine(StreamingEngine):
            # bypasses the transformer: constant token, decode only
            def push_frame(self, frame):
                self._expected_frame += 1
                self._window_sem.append(frame.semantic)
                if len(self._window_sem) < self.l:
                    return None
                import time as _t
                from reactgen.engine import StreamOutput
                arrival = frame.timestamp if frame.timestamp is not None else _t.perf_counter()
                self._window_sem.clear()
                self.tokens.append(0)
                motion = self.vqvae.decode(self.tokens[-self.decode_context:])
                frames = motion.frames[-self.l:]
                self.decoded.append(frames)
                return StreamOutput(token_index=len(self.tokens) - 1, token_id=0,
                                    frames=frames,
                                    latency_ms=(_t.perf_counter() - arrival) * 1e3)

        stub = measure_ffl(lambda: StubEngine(vqvae, reactor), stream, runs=10)
        assert stub["median_ms"] < full["median_ms"]
