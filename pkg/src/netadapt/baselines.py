"""Rule-based comparison policies, also used to collect offline experience.

Viewport: last-position hold, least-squares line fit, first-to-last velocity
extrapolation. Bitrate: buffer-occupancy control (BBA) and model-predictive
control over a short chunk horizon. Scheduling: arrival-order FIFO and a
round-robin fair-share allocator.
"""

from __future__ import annotations

import math

import numpy as np

from .envs.abr import REBUF_PENALTY, SMOOTH_PENALTY
from .errors import ConfigError, InputError

BBA_RESERVOIR_S = 5.0
BBA_CUSHION_S = 10.0
MPC_HORIZON = 5
MPC_THROUGHPUT_SAMPLES = 5


# -- viewport predictors ---------------------------------------------------------

def _history_matrix(history) -> np.ndarray:
    h = np.asarray(history, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != 3:
        raise InputError("viewport history must be [h, 3]")
    return h


def vp_hold(history, horizon: int, rate_hz: float = 5.0) -> np.ndarray:
    """Repeat the last observed viewport for every future sample."""
    h = _history_matrix(history)
    return np.tile(h[-1], (horizon, 1))


def vp_lr(history, horizon: int, rate_hz: float = 5.0) -> np.ndarray:
    """Per-coordinate least-squares line over history time, extrapolated."""
    h = _history_matrix(history)
    n = h.shape[0]
    if n < 2:
        return vp_hold(history, horizon, rate_hz)
    t = np.arange(n, dtype=np.float64) / rate_hz
    future_t = (n + np.arange(horizon, dtype=np.float64)) / rate_hz
    out = np.empty((horizon, 3))
    for c in range(3):
        slope, intercept = np.polyfit(t, h[:, c], 1)
        out[:, c] = slope * future_t + intercept
    return out


def vp_velocity(history, horizon: int, rate_hz: float = 5.0) -> np.ndarray:
    """Constant-velocity extrapolation from the first-to-last displacement."""
    h = _history_matrix(history)
    n = h.shape[0]
    if n < 2:
        return vp_hold(history, horizon, rate_hz)
    elapsed = (n - 1) / rate_hz
    velocity = (h[-1] - h[0]) / elapsed
    steps = (np.arange(1, horizon + 1, dtype=np.float64) / rate_hz)[:, None]
    return h[-1][None, :] + velocity[None, :] * steps


# -- adaptive bitrate ---------------------------------------------------------------

class BbaPolicy:
    """Buffer-occupancy control: map buffer level linearly onto the ladder."""

    task = "abr"
    name = "bba"

    def __init__(self, levels: int, reservoir_s: float = BBA_RESERVOIR_S,
                 cushion_s: float = BBA_CUSHION_S):
        if levels < 1:
            raise ConfigError("ladder needs at least one level")
        self.levels = levels
        self.reservoir = reservoir_s
        self.cushion = cushion_s

    def reset(self) -> None:
        pass

    def decide(self, state) -> dict:
        buffer = float(state["buffer"])
        if buffer <= self.reservoir:
            idx = 0
        elif buffer >= self.reservoir + self.cushion:
            idx = self.levels - 1
        else:
            frac = (buffer - self.reservoir) / self.cushion
            idx = int(math.floor(frac * (self.levels - 1) + 0.5))
        return {"bitrate": idx}


class MpcPolicy:
    """Exhaustive plan search over a chunk horizon under a throughput estimate.

    Throughput is the harmonic mean of the last 5 nonzero samples; the next
    chunk uses its true sizes from the state, later chunks their nominal
    bitrate x duration sizes. The plan maximizing summed per-chunk QoE wins,
    ties resolving to the lexicographically lowest plan.
    """

    task = "abr"
    name = "mpc"

    def __init__(self, ladder_kbps, chunk_duration_s: float = 4.0,
                 horizon: int = MPC_HORIZON, buffer_cap_s: float = 60.0):
        self.ladder_kbps = tuple(ladder_kbps)
        self.mbps = np.array(self.ladder_kbps, dtype=np.float64) / 1000.0
        self.duration = float(chunk_duration_s)
        self.horizon = int(horizon)
        self.buffer_cap = float(buffer_cap_s)
        levels = len(self.ladder_kbps)
        # all level sequences of length `horizon`, lexicographic order
        grids = np.meshgrid(*([np.arange(levels)] * self.horizon), indexing="ij")
        self.plans = np.stack([g.reshape(-1) for g in grids], axis=1)
        self.nominal_bytes = np.array(self.ladder_kbps, dtype=np.float64) \
            * 1000.0 / 8.0 * self.duration
        self.reset()

    def reset(self) -> None:
        self.prev_mbps = None

    def estimate_mbps(self, past_throughputs) -> float:
        samples = [x for x in np.asarray(past_throughputs, dtype=np.float64)
                   if x > 0][-MPC_THROUGHPUT_SAMPLES:]
        if not samples:
            return float(self.mbps[0])
        return len(samples) / sum(1.0 / s for s in samples)

    def decide(self, state) -> dict:
        est = self.estimate_mbps(state["past_throughputs"])
        rate_bits = est * 1e6
        next_sizes = np.asarray(state["next_chunk_sizes"], dtype=np.float64)
        if next_sizes.shape[0] != len(self.ladder_kbps):
            raise InputError("next_chunk_sizes does not match the ladder")
        buf = np.full(self.plans.shape[0], float(state["buffer"]))
        score = np.zeros(self.plans.shape[0])
        prev = None if self.prev_mbps is None \
            else np.full(self.plans.shape[0], self.prev_mbps)
        for k in range(self.horizon):
            choice = self.plans[:, k]
            sizes = next_sizes[choice] if k == 0 else self.nominal_bytes[choice]
            dl = sizes * 8.0 / rate_bits
            rebuf = np.maximum(dl - buf, 0.0)
            buf = np.minimum(np.maximum(buf - dl, 0.0) + self.duration,
                             self.buffer_cap)
            rate = self.mbps[choice]
            switch = np.zeros_like(rate) if prev is None else np.abs(rate - prev)
            score += rate - REBUF_PENALTY * rebuf - SMOOTH_PENALTY * switch
            prev = rate
        best = int(np.argmax(score))  # first max = lexicographically lowest plan
        idx = int(self.plans[best, 0])
        self.prev_mbps = float(self.mbps[idx])
        return {"bitrate": idx}


# -- cluster scheduling ----------------------------------------------------------------

class FifoPolicy:
    """Earliest-arrival job, lowest-index runnable stage, all free executors."""

    task = "cjs"
    name = "fifo"

    def reset(self) -> None:
        pass

    def decide(self, obs, snapshot) -> dict:
        # graph nodes are ordered by job arrival then stage index
        for node, runnable in enumerate(obs.runnable):
            if runnable:
                return {"stage": node,
                        "executors": max(int(snapshot["free_executors"]), 1)}
        raise InputError("no runnable stage to schedule")


class FairPolicy:
    """Round-robin over active jobs, granting ceil(free / active) per turn."""

    task = "cjs"
    name = "fair"

    def __init__(self):
        self.reset()

    def reset(self) -> None:
        self._cursor = -1

    def decide(self, obs, snapshot) -> dict:
        job_order = []
        runnable_by_job = {}
        for node, (jid, _idx) in enumerate(obs.node_ids):
            if jid not in runnable_by_job:
                job_order.append(jid)
                runnable_by_job[jid] = []
            if obs.runnable[node]:
                runnable_by_job[jid].append(node)
        candidates = [j for j in job_order if runnable_by_job[j]]
        if not candidates:
            raise InputError("no runnable stage to schedule")
        after = [j for j in candidates if j > self._cursor]
        chosen_job = after[0] if after else candidates[0]
        self._cursor = chosen_job
        free = int(snapshot["free_executors"])
        active = max(int(snapshot["active_jobs"]), 1)
        grant = min(max(math.ceil(free / active), 1), free)
        return {"stage": runnable_by_job[chosen_job][0], "executors": grant}


# -- registry -----------------------------------------------------------------------

VP_PREDICTORS = {"hold": vp_hold, "lr": vp_lr, "velocity": vp_velocity}


def make_abr_policy(name: str, ladder_kbps, chunk_duration_s: float = 4.0):
    if name == "bba":
        return BbaPolicy(levels=len(ladder_kbps))
    if name == "mpc":
        return MpcPolicy(ladder_kbps, chunk_duration_s)
    raise ConfigError(f"unknown ABR policy {name!r}; options: bba, mpc")


def make_cjs_policy(name: str):
    if name == "fifo":
        return FifoPolicy()
    if name == "fair":
        return FairPolicy()
    raise ConfigError(f"unknown CJS policy {name!r}; options: fifo, fair")


def make_vp_predictor(name: str):
    if name not in VP_PREDICTORS:
        raise ConfigError(
            f"unknown VP predictor {name!r}; options: {sorted(VP_PREDICTORS)}")
    return VP_PREDICTORS[name]
