"""Per-task model bundles: frozen backbone, encoders, heads, action embedders.

Each bundle owns everything needed to turn raw observations into token
sequences and backbone features into answers. The return-conditioned tasks
lay windows out one (return, state pieces, action pieces) group per
timestep and read each action piece from the feature one position before
it; the supervised task reads its whole answer from the final history
token. Only adapters, encoders, heads, and the small embedding tables
train — the backbone core stays frozen and checksummed.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .backbone import Backbone, BackboneConfig
from .data import canonical_json
from .encoders import GraphObs, ModalityInput, ModalityKind, MultimodalEncoder, Projection
from .errors import ConfigError, InputError, InvariantViolation
from .heads import ABRHead, AnswerSpace, CJSHeads, VPHead
from .envs.cjs import NODE_FEATURES, executor_level_ladder

MAX_TIMESTEPS = 512  # timestep-embedding table size; longer episodes clip
RETURN_INPUT = "return_to_go"


@dataclass(frozen=True)
class TaskSpec:
    """Static description of one task's I/O and learning paradigm."""

    name: str                     # abr | cjs | vp
    paradigm: str                 # rl | sl
    inputs: tuple                 # state ModalityInput declarations, in order
    action_names: tuple           # action piece names, in order (RL only)
    loss_kind: str                # ce | mse
    window: int                   # context timesteps (RL) / history length (SL)
    extra: dict = field(default_factory=dict)

    @property
    def n_state_pieces(self) -> int:
        return sum(1 if not i.per_item else i.params["items"] for i in self.inputs)

    @property
    def m_action_pieces(self) -> int:
        return len(self.action_names)

    @property
    def timestep_stride(self) -> int:
        return 1 + self.n_state_pieces + self.m_action_pieces

    def to_dict(self) -> dict:
        return {
            "name": self.name, "paradigm": self.paradigm,
            "inputs": [{"name": i.name, "kind": i.kind.value,
                        "params": i.params, "per_item": i.per_item}
                       for i in self.inputs],
            "action_names": list(self.action_names),
            "loss_kind": self.loss_kind, "window": self.window,
            "extra": self.extra,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSpec":
        return cls(
            name=d["name"], paradigm=d["paradigm"],
            inputs=tuple(ModalityInput(i["name"], ModalityKind(i["kind"]),
                                       i["params"], i["per_item"])
                         for i in d["inputs"]),
            action_names=tuple(d["action_names"]),
            loss_kind=d["loss_kind"], window=d["window"], extra=d["extra"],
        )


def abr_task_spec(ladder_kbps, history: int = 8, window: int = 10) -> TaskSpec:
    """n=4 state pieces, one discrete bitrate action, CE loss, w=10.

    Scales bring each raw piece into an O(1) range before encoding (chunk
    sizes arrive in bytes, the buffer in seconds) without touching the
    stored experience.
    """
    return TaskSpec(
        name="abr", paradigm="rl",
        inputs=(
            ModalityInput("past_throughputs", ModalityKind.TIME_SERIES,
                          {"kernel": 3}),
            ModalityInput("past_delays", ModalityKind.TIME_SERIES, {"kernel": 3}),
            ModalityInput("next_chunk_sizes", ModalityKind.SEQUENCE,
                          {"kernel": 2, "scale": 1e-6}),
            ModalityInput("buffer", ModalityKind.SCALAR, {"scale": 0.1}),
        ),
        action_names=("bitrate",),
        loss_kind="ce", window=window,
        extra={"ladder_kbps": list(ladder_kbps), "history": history,
               "return_scale": 0.05},
    )


def cjs_task_spec(executor_total: int, window: int = 20,
                  executor_levels=None, max_stages: int = 256) -> TaskSpec:
    """n=1 pooled graph piece, (stage, executor-level) actions, CE loss, w=20."""
    levels = tuple(executor_levels) if executor_levels is not None \
        else executor_level_ladder(executor_total)
    return TaskSpec(
        name="cjs", paradigm="rl",
        inputs=(
            ModalityInput("dag", ModalityKind.GRAPH,
                          {"in_features": NODE_FEATURES}),
        ),
        action_names=("stage", "executors"),
        loss_kind="ce", window=window,
        extra={"executor_total": executor_total,
               "executor_levels": list(levels), "max_stages": max_stages,
               "return_scale": 0.01},
    )


def vp_task_spec(horizon: int = 20, history_len: int = 10,
                 include_images: bool = False, rate_hz: float = 5.0) -> TaskSpec:
    """Supervised angle regression: history tokens in, full horizon out."""
    inputs = [ModalityInput("history", ModalityKind.SCALAR,
                            {"in_width": 3, "items": history_len, "scale": 0.1},
                            per_item=True)]
    if include_images:
        inputs.append(ModalityInput("image", ModalityKind.IMAGE,
                                    {"patch_size": 8, "width": 64}))
    return TaskSpec(
        name="vp", paradigm="sl", inputs=tuple(inputs), action_names=(),
        loss_kind="mse", window=history_len,
        extra={"horizon": horizon, "history_len": history_len,
               "include_images": include_images, "rate_hz": rate_hz},
    )


def _zero_embedding_table(rows: int, d: int, dtype: torch.dtype) -> nn.Parameter:
    return nn.Parameter(torch.zeros(rows, d, dtype=dtype))


def _learned_table(rows: int, d: int, generator: torch.Generator,
                   dtype: torch.dtype) -> nn.Parameter:
    w = torch.empty(rows, d, dtype=dtype)
    w.normal_(0.0, 0.02, generator=generator)
    return nn.Parameter(w)


class TaskModel(nn.Module):
    """Shared plumbing: backbone + multimodal encoder + persistence."""

    def __init__(self, spec: TaskSpec, backbone_cfg: BackboneConfig, seed: int = 0):
        super().__init__()
        self.spec = spec
        self.backbone_cfg = backbone_cfg
        self.seed = seed
        self.dtype = backbone_cfg.torch_dtype
        self.backbone = Backbone(backbone_cfg, seed=seed)
        self._gen = torch.Generator().manual_seed(seed + 1_000_003)
        inputs = list(spec.inputs)
        if spec.paradigm == "rl":
            ret_scale = float(spec.extra.get("return_scale", 1.0))
            inputs = [ModalityInput(RETURN_INPUT, ModalityKind.RETURN_VALUE,
                                    {"scale": ret_scale})] + inputs
        self.encoder = MultimodalEncoder(inputs, backbone_cfg.model_dim,
                                         self._gen, dtype=self.dtype)

    # -- parameter accounting ------------------------------------------------

    def trainable_parameters(self) -> dict:
        return {n: p for n, p in self.named_parameters() if p.requires_grad}

    def frozen_checksum(self) -> str:
        return self.backbone.frozen_checksum()

    def trainable_parameter_count(self) -> int:
        return sum(p.numel() for p in self.trainable_parameters().values())

    def trainable_fraction(self) -> float:
        trainable = self.trainable_parameter_count()
        frozen = self.backbone.frozen_parameter_count()
        if trainable == 0:
            raise ConfigError("no trainable parameter block configured")
        return trainable / (trainable + frozen)

    def parameter_digest(self) -> str:
        h = hashlib.sha256()
        for name in sorted(n for n, _ in self.named_parameters()):
            p = dict(self.named_parameters())[name]
            h.update(name.encode())
            h.update(p.detach().cpu().numpy().tobytes())
        h.update(canonical_json(self.config_dict()).encode())
        return h.hexdigest()

    def config_dict(self) -> dict:
        return {"task_spec": self.spec.to_dict(),
                "backbone": self.backbone_cfg.to_dict(), "seed": self.seed}

    # -- persistence -----------------------------------------------------------

    def save(self, directory, extra: dict | None = None) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        arrays = {n: p.detach().cpu().numpy()
                  for n, p in self.named_parameters()}
        np.savez(directory / "weights.npz", **arrays)
        meta = dict(self.config_dict())
        meta["frozen_checksum"] = self.frozen_checksum()
        meta["parameter_digest"] = self.parameter_digest()
        if extra:
            meta["train"] = extra
        (directory / "config.json").write_text(
            json.dumps(meta, sort_keys=True, indent=2) + "\n")
        return directory

    @classmethod
    def load(cls, directory) -> "TaskModel":
        directory = Path(directory)
        meta = json.loads((directory / "config.json").read_text())
        spec = TaskSpec.from_dict(meta["task_spec"])
        cfg = BackboneConfig.from_dict(meta["backbone"])
        model = build_model(spec, cfg, seed=meta["seed"])
        blobs = np.load(directory / "weights.npz")
        own = dict(model.named_parameters())
        for name in blobs.files:
            if name not in own:
                raise InputError(f"checkpoint has unknown parameter {name!r}")
            with torch.no_grad():
                own[name].copy_(torch.as_tensor(blobs[name]))
        if model.frozen_checksum() != meta["frozen_checksum"]:
            raise InvariantViolation(
                "frozen backbone weights in checkpoint differ from manifest")
        return model

    # -- shared assembly helpers --------------------------------------------------

    def _np(self, arr) -> torch.Tensor:
        return torch.as_tensor(np.asarray(arr, dtype=np.float64), dtype=self.dtype)

    def _timestep_vectors(self, timesteps: np.ndarray) -> torch.Tensor:
        idx = torch.as_tensor(np.minimum(timesteps, MAX_TIMESTEPS - 1),
                              dtype=torch.long)
        return self.timestep_table[idx]

    def timestep_vector(self, t: int) -> torch.Tensor:
        return self.timestep_table[min(int(t), MAX_TIMESTEPS - 1)]


class VPModel(TaskModel):
    """History tokens (plus optional image token) -> full horizon of angles."""

    def __init__(self, spec: TaskSpec, backbone_cfg: BackboneConfig, seed: int = 0):
        super().__init__(spec, backbone_cfg, seed)
        if spec.name != "vp" or spec.paradigm != "sl":
            raise ConfigError("VPModel needs the supervised viewport spec")
        self.horizon = spec.extra["horizon"]
        self.history_len = spec.extra["history_len"]
        self.include_images = spec.extra["include_images"]
        self.space = AnswerSpace.for_vp(self.horizon)
        self.head = VPHead(backbone_cfg.model_dim, self.space, self._gen,
                           self.dtype)
        seq_len = self.history_len + (1 if self.include_images else 0)
        self.pos_table = _zero_embedding_table(seq_len, backbone_cfg.model_dim,
                                               self.dtype)

    def assemble_batch(self, inputs: list) -> torch.Tensor:
        histories = np.stack([np.stack(x["history"]) for x in inputs])
        # Encode motion relative to the newest sample. The projection's
        # LayerNorm keeps little beyond the direction of large vectors, so
        # raw ~±90-degree angles would drown the per-step displacements the
        # offset head needs; centering makes the whole predictor
        # translation-equivariant to match the residual output.
        histories = self._np(histories - histories[:, -1:, :])
        histories = histories * self.encoder.input_scale("history")
        b, h, _ = histories.shape
        if h != self.history_len:
            raise InputError(f"history length {h} != configured {self.history_len}")
        feats = self.encoder.encoders["history"](histories)      # [B, h, fw]
        tokens = self.encoder.projections["history"](feats)      # [B, h, d]
        if self.include_images:
            raw = np.stack([np.asarray(x["image"]) for x in inputs])
            if raw.ndim == 3:          # grayscale [B, H, W] -> channels-last
                raw = raw[..., None]
            imgs = self._np(raw)
            img_feat = self.encoder.encoders["image"](imgs)
            img_tok = self.encoder.projections["image"](img_feat).unsqueeze(1)
            tokens = torch.cat([tokens, img_tok], dim=1)
        return tokens + self.pos_table[None, :tokens.shape[1], :]

    def predict_batch(self, inputs: list) -> torch.Tensor:
        """Absolute angles: the head learns offsets from the latest sample."""
        tokens = self.assemble_batch(inputs)
        feats = self.backbone(tokens)
        offsets = self.head(feats[:, -1, :])
        last = self._np(np.stack([np.asarray(x["history"][-1]) for x in inputs]))
        return offsets + last.unsqueeze(1)

    def training_loss(self, inputs: list, labels: list) -> torch.Tensor:
        pred = self.predict_batch(inputs)
        target = self._np(np.stack(labels))
        if pred.shape != target.shape:
            raise InputError(f"label shape {tuple(target.shape)} does not match "
                             f"prediction {tuple(pred.shape)}")
        return (pred - target).square().mean()

    @torch.no_grad()
    def predict(self, history, image=None) -> np.ndarray:
        x = {"history": [np.asarray(s, dtype=np.float64) for s in history]}
        if self.include_images:
            if image is None:
                raise InputError("model expects an image input")
            x["image"] = image
        return self.predict_batch([x])[0].cpu().numpy()


class AbrModel(TaskModel):
    """Return-conditioned bitrate selection over (R, 4 state pieces, action)."""

    def __init__(self, spec: TaskSpec, backbone_cfg: BackboneConfig, seed: int = 0):
        super().__init__(spec, backbone_cfg, seed)
        if spec.name != "abr":
            raise ConfigError("AbrModel needs the abr spec")
        self.ladder = tuple(spec.extra["ladder_kbps"])
        self.space = AnswerSpace.for_abr(self.ladder)
        self.head = ABRHead(backbone_cfg.model_dim, self.space, self._gen,
                            self.dtype)
        self.action_table = _learned_table(len(self.ladder),
                                           backbone_cfg.model_dim, self._gen,
                                           self.dtype)
        self.timestep_table = _zero_embedding_table(MAX_TIMESTEPS,
                                                    backbone_cfg.model_dim,
                                                    self.dtype)
        self.stride = spec.timestep_stride   # 1 + 4 + 1 = 6
        self.state_token_offset = spec.n_state_pieces  # feature read position

    # -- window assembly ---------------------------------------------------------

    def _state_tokens(self, windows: list) -> torch.Tensor:
        """[B, w, n, d] state-piece embeddings in declaration order."""
        b, w = len(windows), windows[0].width
        def stack(name):
            return self._np(np.stack([
                np.stack([np.atleast_1d(step[name]) for step in win.states])
                for win in windows]))
        cols = []
        for spec_input in self.spec.inputs:
            name = spec_input.name
            raw = stack(name) * self.encoder.input_scale(name)  # [B, w, L_or_1]
            if spec_input.kind in (ModalityKind.TIME_SERIES, ModalityKind.SEQUENCE):
                flat = raw.reshape(b * w, 1, raw.shape[-1])
                feats = self.encoder.encoders[name](flat).reshape(b, w, -1)
            else:
                feats = self.encoder.encoders[name](raw)
            cols.append(self.encoder.projections[name](feats))
        return torch.stack(cols, dim=2)

    def assemble_windows(self, windows: list):
        """Token tensor [B, w*stride, d], attention mask, per-step validity."""
        b, w = len(windows), windows[0].width
        d = self.backbone_cfg.model_dim
        returns = self._np(np.stack([win.returns for win in windows]))
        returns = returns * self.encoder.input_scale(RETURN_INPUT)
        ret_feat = self.encoder.encoders[RETURN_INPUT](returns.unsqueeze(-1))
        ret_tok = self.encoder.projections[RETURN_INPUT](ret_feat)  # [B, w, d]
        state_toks = self._state_tokens(windows)                    # [B, w, n, d]
        actions = torch.as_tensor(np.stack(
            [[int(step["bitrate"]) for step in win.actions] for win in windows]),
            dtype=torch.long)
        act_tok = self.action_table[actions]                        # [B, w, d]
        groups = torch.cat([ret_tok.unsqueeze(2), state_toks,
                            act_tok.unsqueeze(2)], dim=2)           # [B, w, stride, d]
        steps = np.stack([win.timesteps for win in windows])
        groups = groups + self._timestep_vectors(steps).unsqueeze(2)
        tokens = groups.reshape(b, w * self.stride, d)
        step_mask = torch.as_tensor(np.stack([win.mask for win in windows]))
        attn = step_mask.repeat_interleave(self.stride, dim=1)
        return tokens, attn, step_mask

    def window_logits(self, windows: list) -> torch.Tensor:
        """Teacher-forced per-timestep bitrate logits [B, w, levels]."""
        tokens, attn, _ = self.assemble_windows(windows)
        feats = self.backbone(tokens, attention_mask=attn)
        read = torch.arange(windows[0].width) * self.stride + self.state_token_offset
        return self.head.logits(feats[:, read, :])

    def training_loss(self, windows: list) -> torch.Tensor:
        logits = self.window_logits(windows)
        truth = torch.as_tensor(np.stack(
            [[int(step["bitrate"]) for step in win.actions] for win in windows]),
            dtype=torch.long)
        mask = torch.as_tensor(np.stack([win.mask for win in windows]))
        per = nn.functional.cross_entropy(
            logits.reshape(-1, len(self.ladder)), truth.reshape(-1),
            reduction="none").reshape(truth.shape)
        per = per * mask
        valid = mask.sum(dim=1)
        if (valid == 0).all():
            raise InputError("every sampled window is fully masked")
        keep = valid > 0
        return (per.sum(dim=1)[keep] / valid[keep]).mean()

    # -- incremental inference ---------------------------------------------------

    @torch.no_grad()
    def encode_step_prefix(self, rtg: float, state: dict, t: int) -> torch.Tensor:
        """(return, state pieces) tokens for a step whose action is pending."""
        toks = [self.encoder.encode_token(RETURN_INPUT, float(rtg))]
        for inp in self.spec.inputs:
            toks.append(self.encoder.encode_token(inp.name, state[inp.name]))
        return torch.stack(toks) + self.timestep_vector(t)

    @torch.no_grad()
    def action_token(self, choice: int, t: int) -> torch.Tensor:
        return (self.action_table[choice] + self.timestep_vector(t)).unsqueeze(0)


class CjsModel(TaskModel):
    """Return-conditioned scheduling: pooled DAG piece, stage + executor actions."""

    def __init__(self, spec: TaskSpec, backbone_cfg: BackboneConfig, seed: int = 0):
        super().__init__(spec, backbone_cfg, seed)
        if spec.name != "cjs":
            raise ConfigError("CjsModel needs the cjs spec")
        self.levels = tuple(spec.extra["executor_levels"])
        self.space = AnswerSpace.for_cjs(
            max_stages=spec.extra["max_stages"],
            total_executors=spec.extra["executor_total"],
            executor_levels=self.levels)
        d = backbone_cfg.model_dim
        node_width = self.encoder.encoders["dag"].width
        self.head = CJSHeads(d, node_width, self.space, self._gen,
                             dtype=self.dtype)
        # stage action token: the chosen node's graph feature, projected
        self.stage_action_proj = Projection(node_width, d, self._gen, self.dtype)
        self.exec_action_table = _learned_table(len(self.levels), d, self._gen,
                                                self.dtype)
        self.timestep_table = _zero_embedding_table(MAX_TIMESTEPS, d, self.dtype)
        self.stride = spec.timestep_stride   # 1 + 1 + 2 = 4
        self.state_token_offset = 1          # dag token position within a step

    def assemble_windows(self, windows: list):
        """Tokens plus per-step graph node features for the stage head.

        Graphs from every (window, step) pair are encoded as one disjoint
        union so each training step runs a single message-passing pass.
        """
        b, w = len(windows), windows[0].width
        d = self.backbone_cfg.model_dim
        graphs = [step["dag"] for win in windows for step in win.states]
        node_feats, pooled = self.encoder.encoders["dag"].forward_batch(graphs)
        dag_tok = self.encoder.projections["dag"](pooled).reshape(b, w, d)

        returns = self._np(np.stack([win.returns for win in windows]))
        returns = returns * self.encoder.input_scale(RETURN_INPUT)
        ret_feat = self.encoder.encoders[RETURN_INPUT](returns.unsqueeze(-1))
        ret_tok = self.encoder.projections[RETURN_INPUT](ret_feat)

        stage_idx = [[int(step["stage"]) for step in win.actions]
                     for win in windows]
        chosen = torch.stack([
            node_feats[k][min(stage_idx[k // w][k % w],
                              node_feats[k].shape[0] - 1)]
            for k in range(b * w)]).reshape(b, w, -1)
        stage_tok = self.stage_action_proj(chosen)

        exec_idx = torch.as_tensor(np.stack(
            [[int(step["executors"]) for step in win.actions] for win in windows]),
            dtype=torch.long)
        exec_tok = self.exec_action_table[exec_idx]

        groups = torch.stack([ret_tok, dag_tok, stage_tok, exec_tok], dim=2)
        steps = np.stack([win.timesteps for win in windows])
        groups = groups + self._timestep_vectors(steps).unsqueeze(2)
        tokens = groups.reshape(b, w * self.stride, d)
        step_mask = torch.as_tensor(np.stack([win.mask for win in windows]))
        attn = step_mask.repeat_interleave(self.stride, dim=1)
        return tokens, attn, step_mask, node_feats

    def training_loss(self, windows: list) -> torch.Tensor:
        b, w = len(windows), windows[0].width
        tokens, attn, step_mask, node_feats = self.assemble_windows(windows)
        feats = self.backbone(tokens, attention_mask=attn)
        dag_pos = torch.arange(w) * self.stride + self.state_token_offset
        stage_ctx = feats[:, dag_pos, :]                # [B, w, d]
        exec_pos = dag_pos + 1                          # stage-action token
        exec_feat = feats[:, exec_pos, :]

        exec_logits = self.head.executor_logits(exec_feat)
        exec_truth = torch.as_tensor(np.stack(
            [[int(step["executors"]) for step in win.actions] for win in windows]),
            dtype=torch.long)
        exec_ce = nn.functional.cross_entropy(
            exec_logits.reshape(-1, len(self.levels)), exec_truth.reshape(-1),
            reduction="none").reshape(b, w)

        # stage CE over variable node counts: pad to the widest graph so the
        # scorer runs once for every valid step in the batch
        entries = [(bi, wi) for bi, win in enumerate(windows)
                   for wi in range(w) if win.mask[wi]]
        if not entries:
            raise InputError("every sampled window is fully masked")
        width = node_feats[0].shape[-1]
        nmax = max(node_feats[bi * w + wi].shape[0] for bi, wi in entries)
        padded = torch.zeros(len(entries), nmax, width, dtype=self.dtype)
        runnable = torch.zeros(len(entries), nmax, dtype=torch.bool)
        truth = torch.empty(len(entries), dtype=torch.long)
        for s, (bi, wi) in enumerate(entries):
            nf = node_feats[bi * w + wi]
            padded[s, :nf.shape[0]] = nf
            graph = windows[bi].states[wi]["dag"]
            runnable[s, :graph.num_nodes] = torch.as_tensor(graph.runnable)
            truth[s] = int(windows[bi].actions[wi]["stage"])
        ctx = stage_ctx[[bi for bi, _ in entries], [wi for _, wi in entries]]
        scores = self.head.stage_scores_padded(padded, ctx)
        scores = scores.masked_fill(~runnable, float("-inf"))
        ce_flat = -torch.log_softmax(scores, dim=1)[
            torch.arange(len(entries)), truth]
        stage_ce = torch.zeros(b, w, dtype=self.dtype)
        stage_ce[[bi for bi, _ in entries], [wi for _, wi in entries]] = ce_flat

        per = (stage_ce + exec_ce) * step_mask
        valid = step_mask.sum(dim=1)
        keep = valid > 0
        if not keep.any():
            raise InputError("every sampled window is fully masked")
        return (per.sum(dim=1)[keep] / valid[keep]).mean()

    # -- incremental inference ---------------------------------------------------

    @torch.no_grad()
    def encode_step_prefix(self, rtg: float, graph: GraphObs, t: int):
        """(return, dag) tokens plus the graph's node features for the heads."""
        node_feats, pooled = self.encoder.encoders["dag"](graph)
        dag_tok = self.encoder.projections["dag"](pooled)
        ret_tok = self.encoder.encode_token(RETURN_INPUT, float(rtg))
        prefix = torch.stack([ret_tok, dag_tok]) + self.timestep_vector(t)
        return prefix, node_feats

    @torch.no_grad()
    def stage_action_token(self, node_feature: torch.Tensor, t: int) -> torch.Tensor:
        return (self.stage_action_proj(node_feature)
                + self.timestep_vector(t)).unsqueeze(0)

    @torch.no_grad()
    def executor_action_token(self, level_idx: int, t: int) -> torch.Tensor:
        return (self.exec_action_table[level_idx]
                + self.timestep_vector(t)).unsqueeze(0)


def build_model(spec: TaskSpec, backbone_cfg: BackboneConfig,
                seed: int = 0) -> TaskModel:
    if spec.name == "vp":
        return VPModel(spec, backbone_cfg, seed)
    if spec.name == "abr":
        return AbrModel(spec, backbone_cfg, seed)
    if spec.name == "cjs":
        return CjsModel(spec, backbone_cfg, seed)
    raise ConfigError(f"unknown task {spec.name!r}")


def snap_to_level(count: int, levels) -> int:
    """Index of the closest discrete executor level (ties toward the lower)."""
    diffs = [abs(lvl - count) for lvl in levels]
    return int(np.argmin(diffs))
