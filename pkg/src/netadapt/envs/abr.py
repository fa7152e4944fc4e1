"""Chunk-level adaptive bitrate streaming simulator.

Bandwidth comes from a piecewise-constant trace (line format:
``timestamp_s throughput_Mbps``, format version 1); downloading a chunk
integrates the trace from the current position, wrapping around when the
episode outlives the trace. Rewards are per-chunk quality-of-experience
terms: bitrate in Mbps minus 4.3x rebuffering seconds minus the absolute
bitrate switch magnitude in Mbps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ConfigError, EnvError, InputError

REBUF_PENALTY = 4.3      # QoE weight on rebuffering seconds
SMOOTH_PENALTY = 1.0     # QoE weight on |bitrate switch| in Mbps

DEFAULT_LADDER_KBPS = (300, 750, 1200, 1850, 2850, 4300)
TOY_LADDER_KBPS = (750, 2850, 4300)
LARGE_LADDER_KBPS = (300, 750, 1200, 1850, 2850, 4300, 6500, 8600)

TRACE_KINDS = {
    # throughput range (Mbps), per-sample level-switch probability, noise sigma
    "default": {"range": (1.0, 4.5), "switch_rate": 0.08, "noise": 0.05},
    "volatile": {"range": (0.2, 8.0), "switch_rate": 0.30, "noise": 0.20},
}

VIDEO_KINDS = {
    "default": {"ladder": DEFAULT_LADDER_KBPS},
    "toy": {"ladder": TOY_LADDER_KBPS},
    "large": {"ladder": LARGE_LADDER_KBPS},
}


class BandwidthTrace:
    """Piecewise-constant throughput samples, strictly increasing timestamps."""

    def __init__(self, timestamps_s, throughputs_mbps, kind: str = "unknown"):
        self.ts = np.asarray(timestamps_s, dtype=np.float64)
        self.mbps = np.asarray(throughputs_mbps, dtype=np.float64)
        self.kind = kind
        if self.ts.ndim != 1 or self.ts.shape != self.mbps.shape or self.ts.size == 0:
            raise InputError("trace needs matched 1-D timestamp/throughput arrays")
        if (np.diff(self.ts) <= 0).any():
            raise InputError("trace timestamps must be strictly increasing")
        if (self.mbps <= 0).any():
            raise InputError("trace throughputs must be positive")
        # segment i covers [rel_start[i], rel_start[i+1]); the last sample
        # keeps the preceding sample spacing (1s for single-sample traces)
        widths = np.diff(self.ts)
        last = widths[-1] if widths.size else 1.0
        self.rel_start = self.ts - self.ts[0]
        self.rel_end = np.concatenate([self.rel_start[1:],
                                       [self.rel_start[-1] + last]])
        self.duration = float(self.rel_end[-1])

    def __len__(self) -> int:
        return self.ts.size

    def throughput_at(self, position_s: float) -> float:
        p = position_s % self.duration
        i = int(np.searchsorted(self.rel_start, p, side="right")) - 1
        return float(self.mbps[i])

    def transfer_time(self, start_position_s: float, bits: float) -> float:
        """Seconds to move `bits` starting at the given trace position."""
        pos = start_position_s % self.duration
        remaining = float(bits)
        elapsed = 0.0
        while remaining > 0:
            i = int(np.searchsorted(self.rel_start, pos, side="right")) - 1
            seg_end = float(self.rel_end[i])
            rate = float(self.mbps[i]) * 1e6  # bits per second
            capacity = (seg_end - pos) * rate
            if capacity >= remaining:
                elapsed += remaining / rate
                remaining = 0.0
            else:
                remaining -= capacity
                elapsed += seg_end - pos
                pos = seg_end % self.duration
        return elapsed

    def save(self, path) -> Path:
        path = Path(path)
        lines = [f"{t:.6f} {m:.6f}" for t, m in zip(self.ts, self.mbps)]
        path.write_text("\n".join(lines) + "\n")
        return path

    @classmethod
    def load(cls, path, kind: str = "file") -> "BandwidthTrace":
        rows = []
        for line in Path(path).read_text().splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise InputError(f"bad trace line {line!r} in {path}")
            rows.append((float(parts[0]), float(parts[1])))
        if not rows:
            raise InputError(f"empty trace file {path}")
        ts, mbps = zip(*rows)
        return cls(ts, mbps, kind=kind)


class VideoManifest:
    """Chunked video description: ladder, duration, per-chunk sizes in bytes."""

    FORMAT_VERSION = 1

    def __init__(self, chunk_duration_s: float, ladder_kbps, chunk_sizes_bytes):
        self.chunk_duration = float(chunk_duration_s)
        self.ladder_kbps = tuple(int(b) for b in ladder_kbps)
        self.chunk_sizes = np.asarray(chunk_sizes_bytes, dtype=np.float64)
        if self.chunk_duration <= 0:
            raise InputError("chunk duration must be positive")
        if any(b >= a for a, b in zip(self.ladder_kbps[1:], self.ladder_kbps)):
            raise InputError(f"ladder must be ascending: {self.ladder_kbps}")
        if self.chunk_sizes.ndim != 2 or \
                self.chunk_sizes.shape[1] != len(self.ladder_kbps):
            raise InputError("chunk size matrix must be C x ladder levels")
        if (self.chunk_sizes <= 0).any():
            raise InputError("chunk sizes must be positive")
        if (np.diff(self.chunk_sizes, axis=1) < 0).any():
            raise InputError("chunk sizes must be nondecreasing across the ladder")

    @property
    def chunk_count(self) -> int:
        return self.chunk_sizes.shape[0]

    @property
    def levels(self) -> int:
        return len(self.ladder_kbps)

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps({
            "format_version": self.FORMAT_VERSION,
            "chunk_duration_s": self.chunk_duration,
            "ladder_kbps": list(self.ladder_kbps),
            "chunk_sizes_bytes": self.chunk_sizes.tolist(),
        }, indent=2) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "VideoManifest":
        d = json.loads(Path(path).read_text())
        if d.get("format_version") != cls.FORMAT_VERSION:
            raise InputError(f"unsupported manifest version in {path}")
        return cls(d["chunk_duration_s"], d["ladder_kbps"], d["chunk_sizes_bytes"])


@dataclass
class AbrStepResult:
    reward: float
    rebuffer: float
    download_time: float
    done: bool


@dataclass
class AbrEpisodeRecord:
    """Per-chunk log of one playback episode."""

    choices: list
    bitrates_kbps: list
    rebuffers_s: list
    download_times_s: list
    rewards: list
    chunk_count: int
    done: bool = False


def _qoe_terms(bitrates_kbps, rebuffers_s):
    mbps = [b / 1000.0 for b in bitrates_kbps]
    terms = []
    prev = None
    for rate, reb in zip(mbps, rebuffers_s):
        switch = 0.0 if prev is None else abs(rate - prev)
        terms.append(rate - REBUF_PENALTY * reb - SMOOTH_PENALTY * switch)
        prev = rate
    return terms


def qoe(record: AbrEpisodeRecord) -> float:
    """Mean per-chunk QoE: bitrate_Mbps - 4.3*rebuffer_s - |bitrate switch|."""
    if not record.done or len(record.bitrates_kbps) != record.chunk_count:
        raise InputError("QoE needs a complete episode record")
    terms = _qoe_terms(record.bitrates_kbps, record.rebuffers_s)
    return sum(terms) / record.chunk_count


class AbrEnv:
    """Stateful single-episode streaming environment.

    State pieces (n=4, in declaration order): past_throughputs (Mbps, last k),
    past_delays (download seconds, last k), next_chunk_sizes (bytes per
    ladder level), buffer (seconds). The action is an index into the ladder.
    """

    STATE_PIECES = ("past_throughputs", "past_delays", "next_chunk_sizes", "buffer")
    ACTION_PIECES = ("bitrate",)

    def __init__(self, manifest: VideoManifest, trace: BandwidthTrace,
                 rtt_s: float = 0.08, history: int = 8,
                 buffer_cap_s: float = 60.0, trace_offset_s: float = 0.0):
        if history < 1:
            raise ConfigError("history length must be >= 1")
        self.manifest = manifest
        self.trace = trace
        self.rtt = float(rtt_s)
        self.history = int(history)
        self.buffer_cap = float(buffer_cap_s)
        self.trace_offset = float(trace_offset_s)
        self.error_count = 0
        self.reset()

    def reset(self) -> dict:
        self.buffer = 0.0
        self.position = self.trace_offset
        self.chunk_index = 0
        self.prev_mbps = None
        self.past_throughputs = [0.0] * self.history
        self.past_delays = [0.0] * self.history
        self.record = AbrEpisodeRecord([], [], [], [], [],
                                       self.manifest.chunk_count)
        return self.state()

    @property
    def done(self) -> bool:
        return self.chunk_index >= self.manifest.chunk_count

    def state(self) -> dict:
        if self.done:
            sizes = np.zeros(self.manifest.levels)
        else:
            sizes = self.manifest.chunk_sizes[self.chunk_index].copy()
        return {
            "past_throughputs": np.array(self.past_throughputs, dtype=np.float64),
            "past_delays": np.array(self.past_delays, dtype=np.float64),
            "next_chunk_sizes": sizes,
            "buffer": float(self.buffer),
        }

    def step(self, choice: int) -> tuple[dict, AbrStepResult]:
        if self.done:
            self.error_count += 1
            raise EnvError("episode already finished")
        if not isinstance(choice, (int, np.integer)) or \
                not (0 <= int(choice) < self.manifest.levels):
            self.error_count += 1
            raise EnvError(
                f"bitrate index {choice!r} outside ladder of "
                f"{self.manifest.levels} levels")
        choice = int(choice)
        size_bytes = float(self.manifest.chunk_sizes[self.chunk_index, choice])
        bits = size_bytes * 8.0
        transfer = self.trace.transfer_time(self.position + self.rtt, bits)
        download = self.rtt + transfer
        rebuffer = max(download - self.buffer, 0.0)
        self.buffer = min(max(self.buffer - download, 0.0)
                          + self.manifest.chunk_duration, self.buffer_cap)
        self.position += download

        mbps = self.manifest.ladder_kbps[choice] / 1000.0
        if self.prev_mbps is None:
            self.prev_mbps = mbps  # first chunk carries no switch penalty
        reward = mbps - REBUF_PENALTY * rebuffer \
            - SMOOTH_PENALTY * abs(mbps - self.prev_mbps)
        self.prev_mbps = mbps

        measured = (bits / 1e6) / transfer if transfer > 0 else 0.0
        self.past_throughputs = self.past_throughputs[1:] + [measured]
        self.past_delays = self.past_delays[1:] + [download]

        self.chunk_index += 1
        rec = self.record
        rec.choices.append(choice)
        rec.bitrates_kbps.append(self.manifest.ladder_kbps[choice])
        rec.rebuffers_s.append(rebuffer)
        rec.download_times_s.append(download)
        rec.rewards.append(reward)
        rec.done = self.done

        return self.state(), AbrStepResult(reward, rebuffer, download, self.done)


# -- synthetic data ------------------------------------------------------------

def synth_trace(kind: str, duration_s: float, rng: np.random.Generator,
                sample_period_s: float = 1.0) -> BandwidthTrace:
    """Markov-modulated throughput: hold a level, switch with fixed probability."""
    if duration_s <= 0:
        raise InputError("trace duration must be positive")
    if kind not in TRACE_KINDS:
        raise ConfigError(f"unknown trace kind {kind!r}; options {sorted(TRACE_KINDS)}")
    params = TRACE_KINDS[kind]
    lo, hi = params["range"]
    n = max(int(np.ceil(duration_s / sample_period_s)), 2)
    level = rng.uniform(lo, hi)
    ts, mbps = [], []
    for i in range(n):
        if i > 0 and rng.random() < params["switch_rate"]:
            level = rng.uniform(lo, hi)
        noisy = level * float(rng.lognormal(0.0, params["noise"]))
        ts.append(i * sample_period_s)
        mbps.append(max(noisy, 0.01))
    return BandwidthTrace(ts, mbps, kind=kind)


def synth_video(kind: str, rng: np.random.Generator, chunk_count: int = 48,
                chunk_duration_s: float = 4.0) -> VideoManifest:
    """Per-chunk sizes: nominal bitrate x duration scaled by lognormal noise."""
    if kind not in VIDEO_KINDS:
        raise ConfigError(f"unknown video kind {kind!r}; options {sorted(VIDEO_KINDS)}")
    ladder = VIDEO_KINDS[kind]["ladder"]
    nominal = np.array(ladder, dtype=np.float64) * 1000.0 / 8.0 * chunk_duration_s
    chunk_noise = rng.lognormal(0.0, 0.2, size=(chunk_count, 1))
    level_noise = rng.lognormal(0.0, 0.05, size=(chunk_count, len(ladder)))
    sizes = nominal[None, :] * chunk_noise * level_noise
    sizes = np.maximum.accumulate(sizes, axis=1)  # keep ladder monotonicity
    return VideoManifest(chunk_duration_s, ladder, sizes)
