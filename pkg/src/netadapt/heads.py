"""Task answer spaces and linear output heads.

Heads map backbone features straight to complete, always-valid answers in a
single pass — a probability vector over a bitrate ladder, a runnable stage
plus executor level, or a full matrix of future viewport angles. No
token-by-token generation is involved, so validity holds by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
from torch import nn

from .errors import ConfigError, InputError


@dataclass(frozen=True)
class AnswerSpace:
    """Valid answer set for one task.

    Exactly one of the per-task field groups is populated:
      - ABR: `ladder_kbps`, strictly increasing bitrates
      - CJS: `max_stages` and `executor_levels` (subset of [1, total_executors])
      - VP: `horizon` future samples x `coords` angles
    """

    task: str
    ladder_kbps: tuple = ()
    max_stages: int = 0
    executor_levels: tuple = ()
    total_executors: int = 0
    horizon: int = 0
    coords: int = 3

    def __post_init__(self):
        if self.task == "abr":
            if not self.ladder_kbps:
                raise ConfigError("ABR answer space needs a nonempty bitrate ladder")
            if any(b >= a for a, b in zip(self.ladder_kbps[1:], self.ladder_kbps)):
                raise ConfigError(f"bitrate ladder must be strictly increasing: {self.ladder_kbps}")
        elif self.task == "cjs":
            if self.max_stages <= 0:
                raise ConfigError("CJS answer space needs max_stages > 0")
            if not self.executor_levels:
                raise ConfigError("CJS answer space needs executor levels")
            total = self.total_executors or max(self.executor_levels)
            for lvl in self.executor_levels:
                if not (1 <= lvl <= total):
                    raise ConfigError(
                        f"executor level {lvl} outside [1, {total}]")
            if list(self.executor_levels) != sorted(set(self.executor_levels)):
                raise ConfigError("executor levels must be strictly increasing")
        elif self.task == "vp":
            if self.horizon <= 0 or self.coords <= 0:
                raise ConfigError("VP answer space needs horizon and coords > 0")
        else:
            raise ConfigError(f"unknown task {self.task!r}")

    @classmethod
    def for_abr(cls, ladder_kbps) -> "AnswerSpace":
        return cls(task="abr", ladder_kbps=tuple(ladder_kbps))

    @classmethod
    def for_cjs(cls, max_stages: int, total_executors: int,
                executor_levels=None) -> "AnswerSpace":
        levels = tuple(executor_levels) if executor_levels is not None \
            else tuple(range(1, total_executors + 1))
        return cls(task="cjs", max_stages=max_stages, executor_levels=levels,
                   total_executors=total_executors)

    @classmethod
    def for_vp(cls, horizon: int, coords: int = 3) -> "AnswerSpace":
        return cls(task="vp", horizon=horizon, coords=coords)


def _linear(d_in: int, d_out: int, generator: torch.Generator,
            dtype: torch.dtype) -> nn.Parameter:
    w = torch.empty(d_in, d_out, dtype=dtype)
    w.normal_(0.0, 1.0 / math.sqrt(d_in), generator=generator)
    return nn.Parameter(w)


def first_argmax(values: torch.Tensor) -> int:
    """Index of the maximum; exact ties resolve to the lowest index."""
    m = values.max()
    return int(torch.nonzero(values == m, as_tuple=False)[0, 0].item())


class VPHead(nn.Module):
    """Single linear map emitting all horizon x 3 future angles at once (degrees)."""

    def __init__(self, model_dim: int, space: AnswerSpace,
                 generator: torch.Generator, dtype: torch.dtype = torch.float32):
        super().__init__()
        if space.task != "vp":
            raise ConfigError("VPHead needs a VP answer space")
        self.horizon = space.horizon
        self.coords = space.coords
        self.weight = _linear(model_dim, self.horizon * self.coords, generator, dtype)
        self.bias = nn.Parameter(torch.zeros(self.horizon * self.coords, dtype=dtype))

    def forward(self, feature: torch.Tensor) -> torch.Tensor:
        out = feature @ self.weight + self.bias
        return out.view(*feature.shape[:-1], self.horizon, self.coords)

    def check_horizon(self, expected: int) -> None:
        if expected != self.horizon:
            raise ConfigError(
                f"head horizon {self.horizon} does not match configured {expected}")


class ABRHead(nn.Module):
    """Linear map + softmax over the bitrate ladder; argmax selection."""

    def __init__(self, model_dim: int, space: AnswerSpace,
                 generator: torch.Generator, dtype: torch.dtype = torch.float32):
        super().__init__()
        if space.task != "abr":
            raise ConfigError("ABRHead needs an ABR answer space")
        self.ladder = tuple(space.ladder_kbps)
        self.weight = _linear(model_dim, len(self.ladder), generator, dtype)
        self.bias = nn.Parameter(torch.zeros(len(self.ladder), dtype=dtype))

    def logits(self, feature: torch.Tensor) -> torch.Tensor:
        return feature @ self.weight + self.bias

    def forward(self, feature: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.logits(feature), dim=-1)

    def select(self, feature: torch.Tensor) -> tuple[int, float, torch.Tensor]:
        """Returns (ladder index, bitrate kbps, probability vector)."""
        probs = self(feature)
        if probs.dim() != 1:
            raise InputError("select() takes a single feature vector")
        idx = first_argmax(probs)
        return idx, float(self.ladder[idx]), probs


class CJSHeads(nn.Module):
    """Stage selector over per-node features plus executor-level selector.

    Stage scores come from a shared two-layer scorer applied to each node
    feature concatenated with the backbone context feature; non-runnable
    stages are masked to -inf before the argmax, so the choice is always
    runnable. The executor head is a linear map over discrete levels.
    """

    def __init__(self, model_dim: int, node_width: int, space: AnswerSpace,
                 generator: torch.Generator, hidden: int = 64,
                 dtype: torch.dtype = torch.float32):
        super().__init__()
        if space.task != "cjs":
            raise ConfigError("CJSHeads needs a CJS answer space")
        self.levels = tuple(space.executor_levels)
        self.stage_w1 = _linear(node_width + model_dim, hidden, generator, dtype)
        self.stage_b1 = nn.Parameter(torch.zeros(hidden, dtype=dtype))
        self.stage_w2 = _linear(hidden, 1, generator, dtype)
        self.stage_b2 = nn.Parameter(torch.zeros(1, dtype=dtype))
        self.exec_weight = _linear(model_dim, len(self.levels), generator, dtype)
        self.exec_bias = nn.Parameter(torch.zeros(len(self.levels), dtype=dtype))

    def stage_scores(self, node_feats: torch.Tensor,
                     context: torch.Tensor) -> torch.Tensor:
        n = node_feats.shape[0]
        ctx = context.unsqueeze(0).expand(n, -1)
        h = torch.relu(torch.cat([node_feats, ctx], dim=-1) @ self.stage_w1
                       + self.stage_b1)
        return (h @ self.stage_w2 + self.stage_b2).squeeze(-1)

    def stage_scores_padded(self, node_feats: torch.Tensor,
                            contexts: torch.Tensor) -> torch.Tensor:
        """Scores for a zero-padded batch: [S, N, width] x [S, d] -> [S, N]."""
        s, n, _ = node_feats.shape
        ctx = contexts.unsqueeze(1).expand(s, n, -1)
        h = torch.relu(torch.cat([node_feats, ctx], dim=-1) @ self.stage_w1
                       + self.stage_b1)
        return (h @ self.stage_w2 + self.stage_b2).squeeze(-1)

    def stage_logits(self, node_feats: torch.Tensor, context: torch.Tensor,
                     runnable_mask) -> torch.Tensor:
        scores = self.stage_scores(node_feats, context)
        mask = torch.as_tensor(runnable_mask, dtype=torch.bool)
        if mask.shape != scores.shape:
            raise InputError(
                f"runnable mask length {tuple(mask.shape)} does not match "
                f"{scores.shape[0]} stages")
        return scores.masked_fill(~mask, float("-inf"))

    def select_stage(self, node_feats: torch.Tensor, context: torch.Tensor,
                     runnable_mask) -> int | None:
        """Index of the chosen runnable stage, or None when nothing is runnable."""
        mask = torch.as_tensor(runnable_mask, dtype=torch.bool)
        if not mask.any():
            return None
        return first_argmax(self.stage_logits(node_feats, context, mask))

    def executor_logits(self, feature: torch.Tensor) -> torch.Tensor:
        return feature @ self.exec_weight + self.exec_bias

    def select_executors(self, feature: torch.Tensor) -> tuple[int, int]:
        """Returns (level index, executor count)."""
        idx = first_argmax(self.executor_logits(feature))
        return idx, int(self.levels[idx])


def build_head(task: str, model_dim: int, space: AnswerSpace,
               generator: torch.Generator, node_width: int = 0,
               dtype: torch.dtype = torch.float32) -> nn.Module:
    if task == "vp":
        return VPHead(model_dim, space, generator, dtype)
    if task == "abr":
        return ABRHead(model_dim, space, generator, dtype)
    if task == "cjs":
        if node_width <= 0:
            raise ConfigError("CJS heads need the graph node feature width")
        return CJSHeads(model_dim, node_width, space, generator, dtype=dtype)
    raise ConfigError(f"unknown task {task!r}")
