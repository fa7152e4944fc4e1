"""Streaming simulator oracles: downloads, buffer dynamics, QoE accounting."""

import numpy as np
import pytest

from netadapt.envs.abr import (
    AbrEnv,
    AbrEpisodeRecord,
    BandwidthTrace,
    TRACE_KINDS,
    VIDEO_KINDS,
    VideoManifest,
    qoe,
    synth_trace,
    synth_video,
)
from netadapt.errors import EnvError, InputError


def constant_trace(mbps, duration=4000.0):
    ts = np.arange(0.0, duration, 1.0)
    return BandwidthTrace(ts, np.full(ts.shape, mbps))


def single_level_manifest(size_bytes, ladder=(1000,), chunks=1, duration=4.0):
    sizes = np.full((chunks, len(ladder)), float(size_bytes))
    return VideoManifest(duration, ladder, sizes)


# -- download / buffer oracles ---------------------------------------------

def test_download_closed_form_oracle():
    # 4 Mbit chunk on a constant 1 Mbps link with 0.08s RTT and empty buffer:
    # download 4.08s, all of it stalls, buffer ends at one chunk duration
    env = AbrEnv(single_level_manifest(4e6 / 8), constant_trace(1.0))
    state, res = env.step(0)
    assert res.download_time == pytest.approx(4.08, abs=1e-9)
    assert res.rebuffer == pytest.approx(4.08, abs=1e-9)
    assert state["buffer"] == pytest.approx(4.0, abs=1e-9)
    assert res.done


def test_no_stall_branch():
    # transfer 1.92s at 1 Mbps -> download 2.0s against a 10s buffer
    env = AbrEnv(single_level_manifest(1.92e6 / 8, chunks=1), constant_trace(1.0))
    env.buffer = 10.0
    state, res = env.step(0)
    assert res.download_time == pytest.approx(2.0, abs=1e-9)
    assert res.rebuffer == 0.0
    assert state["buffer"] == pytest.approx(12.0, abs=1e-9)


def test_first_chunk_has_no_switch_penalty():
    ladder = (300, 4300)
    sizes = np.tile([100.0, 200.0], (2, 1))
    env = AbrEnv(VideoManifest(4.0, ladder, sizes), constant_trace(100.0))
    _, res = env.step(1)  # high first choice: no |delta| term
    assert res.reward == pytest.approx(4.3 - 4.3 * res.rebuffer, abs=1e-9)
    _, res2 = env.step(0)  # second chunk pays the switch
    assert res2.reward == pytest.approx(
        0.3 - 4.3 * res2.rebuffer - abs(0.3 - 4.3), abs=1e-9)


def test_buffer_stays_in_bounds():
    rng = np.random.default_rng(0)
    video = synth_video("default", rng, chunk_count=30)
    trace = synth_trace("volatile", 3000.0, rng)
    env = AbrEnv(video, trace, buffer_cap_s=60.0)
    while not env.done:
        state, _ = env.step(int(rng.integers(video.levels)))
        assert 0.0 <= state["buffer"] <= 60.0


def test_invalid_choice_is_counted_env_error():
    env = AbrEnv(single_level_manifest(100.0, chunks=2), constant_trace(1.0))
    with pytest.raises(EnvError):
        env.step(5)
    with pytest.raises(EnvError):
        env.step(-1)
    assert env.error_count == 2
    env.step(0)
    env.step(0)
    with pytest.raises(EnvError):
        env.step(0)  # episode finished
    assert env.error_count == 3


def test_time_conservation():
    rng = np.random.default_rng(3)
    env = AbrEnv(synth_video("default", rng, chunk_count=12),
                 synth_trace("default", 2000.0, rng))
    while not env.done:
        env.step(int(rng.integers(env.manifest.levels)))
    assert env.position == pytest.approx(sum(env.record.download_times_s), rel=1e-12)


def test_trace_wraparound_allows_long_episodes():
    short = BandwidthTrace([0.0, 1.0], [2.0, 2.0])
    env = AbrEnv(single_level_manifest(1e6, chunks=5), short)
    while not env.done:
        _, res = env.step(0)
        assert res.download_time > 0
    assert env.position > short.duration  # consumed more than one trace pass


def test_transfer_integrates_across_segments():
    # 1 Mbps for 1s then 3 Mbps: 4 Mbit needs 1s (1 Mbit) + 1s (3 Mbit) = 2s
    trace = BandwidthTrace([0.0, 1.0], [1.0, 3.0])
    assert trace.transfer_time(0.0, 4e6) == pytest.approx(2.0, abs=1e-9)


# -- QoE ------------------------------------------------------------------------

def complete_record(bitrates, rebuffers):
    n = len(bitrates)
    return AbrEpisodeRecord(choices=[0] * n, bitrates_kbps=list(bitrates),
                            rebuffers_s=list(rebuffers),
                            download_times_s=[1.0] * n, rewards=[0.0] * n,
                            chunk_count=n, done=True)


def test_qoe_single_chunk():
    assert qoe(complete_record([2850], [0.0])) == pytest.approx(2.85)


def test_qoe_hand_oracle():
    # (2.85 + 0.75 - 4.3*1 - |0.75-2.85|) / 2 = -1.4
    assert qoe(complete_record([2850, 750], [0.0, 1.0])) == pytest.approx(-1.4)


def test_qoe_incomplete_episode_rejected():
    rec = complete_record([2850], [0.0])
    rec.done = False
    with pytest.raises(InputError):
        qoe(rec)


def test_mean_reward_equals_qoe_exactly():
    rng = np.random.default_rng(5)
    env = AbrEnv(synth_video("toy", rng, chunk_count=20),
                 synth_trace("default", 2000.0, rng))
    while not env.done:
        env.step(int(rng.integers(env.manifest.levels)))
    assert sum(env.record.rewards) / env.record.chunk_count == qoe(env.record)


def test_replay_determinism_bitwise():
    rng = np.random.default_rng(9)
    video = synth_video("default", rng, chunk_count=15)
    trace = synth_trace("volatile", 2000.0, rng)
    actions = [int(rng.integers(video.levels)) for _ in range(15)]

    def run():
        env = AbrEnv(video, trace)
        rewards = []
        for a in actions:
            _, res = env.step(a)
            rewards.append(res.reward)
        return rewards

    assert run() == run()


# -- synthetic data ----------------------------------------------------------------

def test_trace_kind_parameters_ordered():
    d, v = TRACE_KINDS["default"], TRACE_KINDS["volatile"]
    assert v["range"][0] < d["range"][0] and v["range"][1] > d["range"][1]
    assert v["switch_rate"] > d["switch_rate"]


def test_synth_trace_positive_and_deterministic():
    t1 = synth_trace("volatile", 500.0, np.random.default_rng(4))
    t2 = synth_trace("volatile", 500.0, np.random.default_rng(4))
    assert (t1.mbps > 0).all()
    np.testing.assert_array_equal(t1.mbps, t2.mbps)
    np.testing.assert_array_equal(t1.ts, t2.ts)


def test_synth_video_ladders_and_monotonicity():
    rng = np.random.default_rng(6)
    default = synth_video("default", rng)
    assert default.ladder_kbps == (300, 750, 1200, 1850, 2850, 4300)
    assert default.chunk_duration == 4.0
    toy = synth_video("toy", rng)
    assert toy.ladder_kbps == (750, 2850, 4300)
    large = synth_video("large", rng)
    assert max(large.ladder_kbps) > max(default.ladder_kbps)
    assert (np.diff(default.chunk_sizes, axis=1) >= 0).all()


def test_trace_file_roundtrip(tmp_path):
    t = synth_trace("default", 100.0, np.random.default_rng(7))
    path = t.save(tmp_path / "trace.txt")
    loaded = BandwidthTrace.load(path)
    np.testing.assert_allclose(loaded.ts, t.ts, atol=1e-6)
    np.testing.assert_allclose(loaded.mbps, t.mbps, atol=1e-6)


def test_manifest_file_roundtrip(tmp_path):
    v = synth_video("default", np.random.default_rng(8), chunk_count=6)
    path = v.save(tmp_path / "video.json")
    loaded = VideoManifest.load(path)
    assert loaded.ladder_kbps == v.ladder_kbps
    np.testing.assert_array_equal(loaded.chunk_sizes, v.chunk_sizes)


def test_trace_validation():
    with pytest.raises(InputError):
        BandwidthTrace([0.0, 0.0], [1.0, 1.0])  # non-increasing
    with pytest.raises(InputError):
        BandwidthTrace([0.0, 1.0], [1.0, 0.0])  # nonpositive throughput


def test_manifest_validation():
    with pytest.raises(InputError):
        VideoManifest(4.0, (4300, 300), np.ones((1, 2)))  # descending ladder
    with pytest.raises(InputError):
        VideoManifest(4.0, (300, 4300), np.array([[2.0, 1.0]]))  # non-monotone
