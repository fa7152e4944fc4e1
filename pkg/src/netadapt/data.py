"""Trajectory containers, return annotation, window sampling and dataset files.

Offline experience is stored as return-annotated trajectories; training reads
fixed-width windows (left-padded, masked) laid out one (return, state pieces,
action pieces) group per timestep. Datasets persist as line-delimited JSON
records next to a manifest and are content-addressed by a sha256 digest.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoders import GraphObs
from .errors import ConfigError, InputError, InvariantViolation


# -- value (de)serialization --------------------------------------------------

def encode_value(v):
    if isinstance(v, GraphObs):
        return {"__graph__": v.to_jsonable()}
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, (list, tuple)):
        return [encode_value(x) for x in v]
    return v


def decode_value(v):
    if isinstance(v, dict) and "__graph__" in v:
        return GraphObs.from_jsonable(v["__graph__"])
    return v


def zero_like_value(v):
    """A zeroed stand-in with the same shape, used for padded timesteps."""
    if isinstance(v, GraphObs):
        return GraphObs(np.zeros_like(v.nodes), [], [False] * v.num_nodes)
    if isinstance(v, np.ndarray):
        return np.zeros_like(v)
    if isinstance(v, (list, tuple)):
        return [zero_like_value(x) for x in v]
    if isinstance(v, (int, np.integer)):
        return 0
    return 0.0


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


# -- trajectories --------------------------------------------------------------

def compute_returns(rewards) -> np.ndarray:
    """Suffix sums: R_t = sum of rewards from t to the end."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.size == 0:
        raise InputError("cannot compute returns of an empty reward sequence")
    return np.cumsum(r[::-1])[::-1].copy()


@dataclass
class Trajectory:
    """One episode: per-step reward, state pieces by name, action pieces by name."""

    rewards: list
    states: list
    actions: list

    def __post_init__(self):
        t = len(self.rewards)
        if not (t == len(self.states) == len(self.actions)):
            raise InputError(
                f"length mismatch: {t} rewards, {len(self.states)} states, "
                f"{len(self.actions)} actions")
        if t == 0:
            raise InputError("empty trajectory")
        state_keys = set(self.states[0])
        action_keys = set(self.actions[0])
        for s in self.states:
            if set(s) != state_keys:
                raise InputError("state piece names vary within the trajectory")
        for a in self.actions:
            if set(a) != action_keys:
                raise InputError("action piece names vary within the trajectory")

    @property
    def length(self) -> int:
        return len(self.rewards)


@dataclass
class ReturnAnnotatedTrajectory(Trajectory):
    returns: np.ndarray = field(default=None)

    def __post_init__(self):
        super().__post_init__()
        if self.returns is None:
            self.returns = compute_returns(self.rewards)
        else:
            self.returns = np.asarray(self.returns, dtype=np.float64)
        self.check_return_recursion()

    def check_return_recursion(self, atol: float = 1e-9) -> None:
        r = np.asarray(self.rewards, dtype=np.float64)
        if abs(self.returns[-1] - r[-1]) > atol:
            raise InvariantViolation("final return must equal final reward")
        for t in range(self.length - 1):
            if abs(self.returns[t] - (r[t] + self.returns[t + 1])) > atol:
                raise InvariantViolation(
                    f"return recursion broken at step {t}")

    def to_record(self) -> dict:
        return {
            "rewards": [float(x) for x in self.rewards],
            "returns": [float(x) for x in self.returns],
            "states": [{k: encode_value(v) for k, v in s.items()} for s in self.states],
            "actions": [{k: encode_value(v) for k, v in a.items()} for a in self.actions],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "ReturnAnnotatedTrajectory":
        return cls(
            rewards=rec["rewards"],
            states=[{k: decode_value(v) for k, v in s.items()} for s in rec["states"]],
            actions=[{k: decode_value(v) for k, v in a.items()} for a in rec["actions"]],
            returns=np.asarray(rec["returns"], dtype=np.float64),
        )


# -- datasets ---------------------------------------------------------------------

class ExperienceDataset:
    """Immutable collection of return-annotated trajectories plus provenance."""

    def __init__(self, trajectories, manifest: dict):
        if not trajectories:
            raise InputError("experience dataset needs at least one trajectory")
        self._trajectories = tuple(trajectories)
        self.manifest = dict(manifest)
        self.manifest.setdefault(
            "max_return", max(float(t.returns[0]) for t in self._trajectories))
        self.manifest.setdefault("episodes", len(self._trajectories))

    @property
    def trajectories(self) -> tuple:
        return self._trajectories

    def __len__(self) -> int:
        return len(self._trajectories)

    @property
    def max_return(self) -> float:
        return float(self.manifest["max_return"])

    def records_text(self) -> str:
        return "".join(canonical_json(t.to_record()) + "\n"
                       for t in self._trajectories)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.records_text().encode())
        h.update(canonical_json(self.manifest).encode())
        return h.hexdigest()

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "records.jsonl").write_text(self.records_text())
        (directory / "manifest.json").write_text(
            json.dumps(self.manifest, sort_keys=True, indent=2) + "\n")
        return directory

    @classmethod
    def load(cls, directory) -> "ExperienceDataset":
        directory = Path(directory)
        records_path = directory / "records.jsonl"
        manifest_path = directory / "manifest.json"
        if not records_path.exists() or not manifest_path.exists():
            raise InputError(f"no dataset at {directory}")
        trajectories = [
            ReturnAnnotatedTrajectory.from_record(json.loads(line))
            for line in records_path.read_text().splitlines() if line.strip()
        ]
        return cls(trajectories, json.loads(manifest_path.read_text()))


class SLDataset:
    """Paired observations and labels for supervised adaptation."""

    def __init__(self, inputs, labels, manifest: dict | None = None):
        if len(inputs) != len(labels):
            raise InputError(
                f"{len(inputs)} inputs vs {len(labels)} labels")
        if len(inputs) == 0:
            raise InputError("supervised dataset is empty")
        self.inputs = list(inputs)
        self.labels = list(labels)
        self.manifest = dict(manifest or {})
        self.manifest.setdefault("size", len(self.inputs))

    def __len__(self) -> int:
        return len(self.inputs)

    def records_text(self) -> str:
        lines = []
        for x, y in zip(self.inputs, self.labels):
            lines.append(canonical_json({
                "x": {k: encode_value(v) for k, v in x.items()},
                "y": encode_value(y),
            }))
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.records_text().encode())
        h.update(canonical_json(self.manifest).encode())
        return h.hexdigest()

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "records.jsonl").write_text(self.records_text())
        (directory / "manifest.json").write_text(
            json.dumps(self.manifest, sort_keys=True, indent=2) + "\n")
        return directory

    @classmethod
    def load(cls, directory) -> "SLDataset":
        directory = Path(directory)
        records_path = directory / "records.jsonl"
        if not records_path.exists():
            raise InputError(f"no dataset at {directory}")
        xs, ys = [], []
        for line in records_path.read_text().splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            xs.append({k: decode_value(v) for k, v in rec["x"].items()})
            ys.append(np.asarray(rec["y"], dtype=np.float64))
        manifest = json.loads((directory / "manifest.json").read_text()) \
            if (directory / "manifest.json").exists() else {}
        return cls(xs, ys, manifest)


# -- window sampling ------------------------------------------------------------

@dataclass
class Window:
    """w timesteps ending at t (1-based), left-padded with zeroed steps."""

    returns: np.ndarray          # [w]
    states: list                 # w dicts of state pieces
    actions: list                # w dicts of action pieces
    mask: np.ndarray             # [w] bool, False on padding
    timesteps: np.ndarray        # [w] episode-relative indices (0 on padding)
    traj_index: int
    t_end: int

    @property
    def width(self) -> int:
        return len(self.states)

    def token_count(self, n: int, m: int) -> int:
        return self.width * (1 + n + m)


def extract_window(traj: ReturnAnnotatedTrajectory, t_end: int, w: int,
                   traj_index: int = 0) -> Window:
    """Window of the w timesteps ending at 1-based index t_end (inclusive)."""
    if not (1 <= t_end <= traj.length):
        raise InputError(f"window end {t_end} outside [1, {traj.length}]")
    zero_state = {k: zero_like_value(v) for k, v in traj.states[0].items()}
    zero_action = {k: zero_like_value(v) for k, v in traj.actions[0].items()}
    returns = np.zeros(w, dtype=np.float64)
    mask = np.zeros(w, dtype=bool)
    timesteps = np.zeros(w, dtype=np.int64)
    states, actions = [], []
    for slot, step in enumerate(range(t_end - w, t_end)):
        if step < 0:
            states.append(zero_state)
            actions.append(zero_action)
        else:
            returns[slot] = traj.returns[step]
            states.append(traj.states[step])
            actions.append(traj.actions[step])
            mask[slot] = True
            timesteps[slot] = step
    return Window(returns, states, actions, mask, timesteps, traj_index, t_end)


def sample_window(dataset: ExperienceDataset, w: int,
                  rng: np.random.Generator) -> Window:
    """Uniform trajectory, uniform end index in [1, T] (final step included)."""
    if w < 1:
        raise ConfigError(f"window width must be >= 1, got {w}")
    idx = int(rng.integers(len(dataset)))
    traj = dataset.trajectories[idx]
    t_end = int(rng.integers(1, traj.length + 1))
    return extract_window(traj, t_end, w, traj_index=idx)


# -- losses -----------------------------------------------------------------------

def sl_loss(y, y_hat, kind: str) -> float:
    """Supervised loss: MSE over all elements, or CE with natural log.

    For "ce", y is the true class index (or index array) and y_hat the
    predicted probability vector(s).
    """
    if kind == "mse":
        a = np.asarray(y, dtype=np.float64)
        b = np.asarray(y_hat, dtype=np.float64)
        if a.shape != b.shape:
            raise InputError(f"shape mismatch: {a.shape} vs {b.shape}")
        return float(np.mean((a - b) ** 2))
    if kind == "ce":
        idx = np.atleast_1d(np.asarray(y, dtype=np.int64))
        probs = np.atleast_2d(np.asarray(y_hat, dtype=np.float64))
        if probs.shape[0] != idx.shape[0]:
            raise InputError(
                f"{idx.shape[0]} labels vs {probs.shape[0]} probability rows")
        if (idx < 0).any() or (idx >= probs.shape[1]).any():
            raise InputError("class index outside probability vector")
        picked = probs[np.arange(len(idx)), idx]
        with np.errstate(divide="ignore"):
            return float(np.mean(-np.log(picked)))
    raise ConfigError(f"unknown loss kind {kind!r}")


def rl_loss(true_actions, predicted, mask, kind: str):
    """Masked mean over valid timesteps of summed per-action-piece losses.

    `true_actions` and `predicted` are [w] lists whose entries are dicts of
    action pieces; for "ce" each predicted piece is a probability vector and
    the true piece a class index, for "mse" both are real arrays. Returns
    None when the whole window is masked out.
    """
    mask = np.asarray(mask, dtype=bool)
    w_valid = int(mask.sum())
    if w_valid == 0:
        return None
    total = 0.0
    for i, valid in enumerate(mask):
        if not valid:
            continue
        truth, pred = true_actions[i], predicted[i]
        if set(truth) != set(pred):
            raise InputError("action piece names differ between truth and prediction")
        for name in truth:
            if kind == "ce":
                total += sl_loss(truth[name], pred[name], "ce")
            elif kind == "mse":
                total += sl_loss(truth[name], pred[name], "mse")
            else:
                raise ConfigError(f"unknown loss kind {kind!r}")
    return total / w_valid


# -- misc -----------------------------------------------------------------------

def digest_bytes(payload: bytes) -> str:
    return hashlib.sha256(payload).hexdigest()


def digest_json(obj) -> str:
    return digest_bytes(canonical_json(obj).encode())


@dataclass
class TrainConfig:
    """Adaptation hyperparameters shared by the SL and RL paths."""

    window: int = 10
    batch_size: int = 16
    steps: int = 1000
    lr: float = 1e-3
    seed: int = 0
    loss_kind: str = "ce"
    head_lr: float | None = None
    grad_clip: float = 1.0

    def __post_init__(self):
        if self.window < 1:
            raise ConfigError(f"window must be >= 1, got {self.window}")
        if self.loss_kind not in ("ce", "mse"):
            raise ConfigError(f"loss kind must be 'ce' or 'mse', got {self.loss_kind!r}")
        if self.steps < 1 or self.batch_size < 1:
            raise ConfigError("steps and batch size must be positive")

    def to_dict(self) -> dict:
        return {
            "window": self.window, "batch_size": self.batch_size,
            "steps": self.steps, "lr": self.lr, "seed": self.seed,
            "loss_kind": self.loss_kind, "head_lr": self.head_lr,
            "grad_clip": self.grad_clip,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)
