"""Viewport prediction data pipeline: traces, windows, images, MAE.

Traces are fixed-rate (roll, pitch, yaw) angle streams in degrees (file
format: ``t_s roll pitch yaw`` per line). Supervised samples pair a history
window with the immediately following prediction window; an optional
single-channel content image shows a Gaussian blob at the current viewport,
standing in for video saliency.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import SLDataset
from .errors import ConfigError, InputError

DEFAULT_RATE_HZ = 5.0
DEFAULT_HW_S = 2.0
DEFAULT_PW_S = 4.0
ANGLE_LIMIT_DEG = 170.0  # synthetic traces stay clear of the +-180 wrap


@dataclass
class ViewportTrace:
    angles: np.ndarray          # [T, 3] degrees: roll, pitch, yaw
    rate_hz: float = DEFAULT_RATE_HZ
    viewer_id: int = 0
    video_id: int = 0
    images: np.ndarray | None = None  # optional [T, H, W] content frames

    def __post_init__(self):
        self.angles = np.asarray(self.angles, dtype=np.float64)
        if self.angles.ndim != 2 or self.angles.shape[1] != 3:
            raise InputError("viewport trace must be a [T, 3] angle array")
        if not np.isfinite(self.angles).all():
            raise InputError("viewport angles must be finite")
        if self.rate_hz <= 0:
            raise InputError("sampling rate must be positive")
        if self.images is not None and len(self.images) != len(self.angles):
            raise InputError("one image per sample required when images are given")

    def __len__(self) -> int:
        return self.angles.shape[0]

    def save(self, path) -> Path:
        path = Path(path)
        lines = [f"{i / self.rate_hz:.6f} {a:.6f} {b:.6f} {c:.6f}"
                 for i, (a, b, c) in enumerate(self.angles)]
        path.write_text("\n".join(lines) + "\n")
        return path

    @classmethod
    def load(cls, path, viewer_id: int = 0, video_id: int = 0) -> "ViewportTrace":
        rows = []
        times = []
        for line in Path(path).read_text().splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 4:
                raise InputError(f"bad viewport line {line!r} in {path}")
            times.append(float(parts[0]))
            rows.append([float(p) for p in parts[1:]])
        if len(rows) < 2:
            raise InputError(f"viewport trace {path} too short")
        dt = np.diff(times)
        if not np.allclose(dt, dt[0], atol=1e-6):
            raise InputError(f"viewport trace {path} is not fixed-rate")
        return cls(np.array(rows), rate_hz=1.0 / dt[0],
                   viewer_id=viewer_id, video_id=video_id)


def mae(pred, gt) -> float:
    """Mean over future samples of the three-coordinate mean absolute error."""
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape:
        raise InputError(f"shape mismatch: {p.shape} vs {g.shape}")
    if p.ndim != 2 or p.shape[1] != 3:
        raise InputError("MAE expects [H, 3] angle matrices")
    return float(np.mean(np.abs(p - g).mean(axis=1)))


def window_counts(trace_len: int, hw_s: float, pw_s: float, rate_hz: float,
                  stride: int = 1) -> int:
    h = int(round(hw_s * rate_hz))
    p = int(round(pw_s * rate_hz))
    usable = trace_len - (h + p) + 1
    return max(0, (usable + stride - 1) // stride)


def make_dataset(traces, hw_s: float = DEFAULT_HW_S, pw_s: float = DEFAULT_PW_S,
                 rate_hz: float = DEFAULT_RATE_HZ, stride: int = 1,
                 include_images: bool = False) -> SLDataset:
    """Sliding contiguous (history, future) windows over each trace."""
    if stride < 1:
        raise ConfigError("stride must be >= 1")
    h = int(round(hw_s * rate_hz))
    p = int(round(pw_s * rate_hz))
    if h < 1 or p < 1:
        raise ConfigError("history and prediction windows must be >= 1 sample")
    xs, ys = [], []
    skipped = 0
    for trace in traces:
        if abs(trace.rate_hz - rate_hz) > 1e-9:
            raise InputError(
                f"trace rate {trace.rate_hz} Hz does not match requested {rate_hz}")
        if len(trace) < h + p:
            skipped += 1
            continue
        if include_images and trace.images is None:
            raise InputError("images requested but trace carries none")
        for start in range(0, len(trace) - (h + p) + 1, stride):
            x = {"history": [trace.angles[start + i].copy() for i in range(h)]}
            if include_images:
                x["image"] = trace.images[start + h - 1].copy()
            xs.append(x)
            ys.append(trace.angles[start + h:start + h + p].copy())
    if not xs:
        raise InputError("no trace was long enough to yield a window")
    return SLDataset(xs, ys, {
        "task": "vp", "hw_s": hw_s, "pw_s": pw_s, "rate_hz": rate_hz,
        "stride": stride, "history_len": h, "horizon": p,
        "include_images": include_images, "skipped_traces": skipped,
    })


def split_traces(traces, rng: np.random.Generator,
                 fractions=(0.7, 0.15, 0.15)) -> tuple[list, list, list]:
    """Trace-level split so train/val/test windows never share a source trace."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError("split fractions must sum to 1")
    order = rng.permutation(len(traces))
    n_train = int(round(fractions[0] * len(traces)))
    n_val = int(round(fractions[1] * len(traces)))
    train = [traces[i] for i in order[:n_train]]
    val = [traces[i] for i in order[n_train:n_train + n_val]]
    test = [traces[i] for i in order[n_train + n_val:]]
    return train, val, test


def blob_image(angles, size: int = 32, sigma: float = 2.5) -> np.ndarray:
    """Gaussian blob at the viewport's projected pixel (yaw -> x, pitch -> y)."""
    yaw, pitch = float(angles[2]), float(angles[1])
    cx = (yaw + 180.0) / 360.0 * (size - 1)
    cy = (pitch + 90.0) / 180.0 * (size - 1)
    ys, xs = np.mgrid[0:size, 0:size]
    return np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * sigma ** 2))


def blob_center(angles, size: int = 32) -> tuple[int, int]:
    """(row, col) of the blob peak for the given angles."""
    yaw, pitch = float(angles[2]), float(angles[1])
    cx = (yaw + 180.0) / 360.0 * (size - 1)
    cy = (pitch + 90.0) / 180.0 * (size - 1)
    return int(round(cy)), int(round(cx))


def synth_viewports(duration_s: float, rng: np.random.Generator,
                    rate_hz: float = DEFAULT_RATE_HZ,
                    max_velocity_deg_s: float = 30.0,
                    reversion: float = 0.15, accel_sigma: float = 6.0,
                    viewer_id: int = 0, video_id: int = 0,
                    with_images: bool = False,
                    image_size: int = 32) -> ViewportTrace:
    """Mean-reverting random walk on angular velocity, clipped away from wrap."""
    if duration_s <= 0:
        raise InputError("trace duration must be positive")
    n = int(round(duration_s * rate_hz))
    dt = 1.0 / rate_hz
    angles = np.zeros((n, 3))
    pos = rng.uniform(-60.0, 60.0, size=3)
    vel = rng.uniform(-max_velocity_deg_s / 2, max_velocity_deg_s / 2, size=3)
    for t in range(n):
        angles[t] = pos
        vel = (1 - reversion) * vel + rng.normal(0.0, accel_sigma, size=3)
        vel = np.clip(vel, -max_velocity_deg_s, max_velocity_deg_s)
        pos = pos + vel * dt
        # mean-revert position toward center and hard-clip off the wrap
        pos = np.clip(pos * (1 - 0.002), -ANGLE_LIMIT_DEG, ANGLE_LIMIT_DEG)
    images = None
    if with_images:
        images = np.stack([blob_image(a, size=image_size) for a in angles])
    return ViewportTrace(angles, rate_hz=rate_hz, viewer_id=viewer_id,
                         video_id=video_id, images=images)
